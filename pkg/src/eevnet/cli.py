"""Command-line front end.

Every subcommand resolves its options as flags > ``--config`` JSON > built-in
defaults and records the resolved values, inputs and outputs in a run
manifest. ``replay`` re-executes a manifest.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .dataio import (
    CHECKPOINT_VERSION,
    FEATURE_VERSION,
    LABEL_HEADER,
    LABEL_RATE_HZ,
    LABEL_SCHEMA_VERSION,
    LabelTrack,
    load_checkpoint,
    read_dataset,
    read_features,
    read_labels,
    save_checkpoint,
    write_dataset,
    write_labels,
)
from .errors import EEVError, FormatError, InputError, NumericError
from .gradcheck import THRESHOLD, run_suite
from .metrics import score_dataset, score_video
from .model import ModelConfig
from .signal_ops import FILTERS, linear_interpolate
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import PredictionStrategy, TrainConfig, ensemble, predict_many, train

logger = logging.getLogger("eevnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# per-command tunables: name -> (type, default, help). Paths are declared on
# the parsers directly and never come from a config file.
OPTIONS: Dict[str, Dict[str, tuple]] = {
    "gen-data": {
        "n_videos": (int, 8, "number of videos"),
        "duration_s": (float, 120.0, "video length in seconds"),
        "visual_dim": (int, 16, "visual feature width"),
        "audio_dim": (int, 8, "audio feature width"),
        "label_smoothness": (float, 5.0, "teacher context window in seconds"),
        "noise_amp": (float, 0.1, "uniform label noise amplitude"),
        "dropout_prob": (float, 0.02, "per-second probability of a zeroed label run"),
        "seed": (int, 0, "random seed"),
    },
    "train": {
        "loss": (str, "l1", "l1, kl or ccc"),
        "learning_rate": (float, 1e-3, "Adam step size"),
        "epochs": (int, 20, "training epochs"),
        "clip_seconds": (float, 60.0, "training clip length in seconds"),
        "sample_rate_hz": (float, 1.0, "training sampling rate (1 or 6)"),
        "batch_clips": (int, 8, "clips per optimizer step"),
        "grad_clip_norm": (float, 5.0, "global gradient norm bound"),
        "validation_fraction": (float, 0.2, "share of videos held out when --val-data is absent"),
        "hidden_dim": (int, 256, "GRU hidden width"),
        "head_order": (str, "gate_sigmoid", "gate_sigmoid or sigmoid_gate"),
        "shard_clips": (int, 4, "clips per gradient shard"),
        "seed": (int, 0, "random seed"),
    },
    "predict": {
        "strategy": (str, None, "dense6hz_10s, dense6hz_60s or sparse1hz_interp (default: from checkpoint)"),
    },
    "evaluate": {},
    "filter": {
        "kind": (str, "gaussian", "butterworth, median or gaussian"),
        "cutoff_norm": (float, 0.1, "Butterworth cutoff as a fraction of Nyquist"),
        "order": (int, 2, "Butterworth order (1 or 2)"),
        "window": (int, 5, "median window (odd)"),
        "sigma_samples": (float, 3.0, "Gaussian sigma in samples"),
    },
    "interpolate": {
        "target_hz": (float, LABEL_RATE_HZ, "output rate"),
        "n_samples": (int, None, "output length (default: span of the input)"),
    },
    "ensemble": {},
    "grad-check": {
        "seed": (int, 0, "random seed for the test cases"),
        "epsilon": (float, 1e-5, "central-difference step"),
    },
}
COMMON = {"threads": (int, 1, "worker threads for parallel sections")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def version_string() -> str:
    return (f"eevnet {__version__} (EEVF v{FEATURE_VERSION}, EEVM v{CHECKPOINT_VERSION}, "
            f"label CSV v{LABEL_SCHEMA_VERSION})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eevnet", description="Evoked-expression prediction toolkit.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        for opt, (typ, _, h) in {**COMMON, **OPTIONS.get(name, {})}.items():
            p.add_argument(_flag(opt), dest=opt, type=typ, default=None, help=h)
        p.add_argument("--config", type=Path, help="JSON file with option defaults")
        p.add_argument("--log-level", default="WARNING", help="logging level for stderr")
        return p

    p = command("gen-data", "write a synthetic dataset")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="default: OUT_DIR/manifest.json")

    p = command("train", "train a model on a dataset directory")
    p.add_argument("--data", type=Path, required=True, help="directory of .eevf/.csv pairs")
    p.add_argument("--val-data", type=Path, help="validation directory (default: hold out videos)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path (.eevm)")
    p.add_argument("--history", type=Path, help="default: OUT.history.csv")
    p.add_argument("--manifest", type=Path, help="default: OUT.manifest.json")

    p = command("predict", "write 6 Hz predictions for feature files")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True, help=".eevf file or directory")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="default: OUT_DIR/manifest.json")

    p = command("evaluate", "score predictions against labels")
    p.add_argument("pred", type=Path, help="prediction CSV or directory")
    p.add_argument("label", type=Path, help="label CSV or directory")
    p.add_argument("--out", type=Path, help="per-video score CSV")
    p.add_argument("--manifest", type=Path, help="default: OUT.manifest.json when --out is set")

    for name, help_ in (("filter", "low-pass filter a label CSV"),
                        ("interpolate", "linearly resample a label CSV")):
        p = command(name, help_)
        p.add_argument("--input", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--manifest", type=Path, help="default: OUT.manifest.json")

    p = command("ensemble", "average several prediction CSVs")
    p.add_argument("--inputs", type=Path, nargs="+", required=True, help="CSV files or directories")
    p.add_argument("--out", type=Path, required=True, help="CSV file or directory")
    p.add_argument("--manifest", type=Path, help="default: OUT.manifest.json")

    command("grad-check", "finite-difference check of every layer")

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--log-level", default="WARNING")
    return parser


def _load_config(path: Optional[Path], command: str) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise FormatError(f"config {path}: top level must be an object")
    # top-level keys apply to every command; a section named after the
    # command overrides them
    merged = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    merged.update(raw.get(command, {}))
    return merged


def resolve_options(args: argparse.Namespace) -> dict:
    """Effective option values: flag, then config file, then default."""
    config = _load_config(args.config, args.command)
    out = {}
    for name, (typ, default, _) in {**COMMON, **OPTIONS.get(args.command, {})}.items():
        value = getattr(args, name)
        if value is None and name in config:
            value = config[name] if config[name] is None else typ(config[name])
        out[name] = default if value is None else value
    if out["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return out


def _paths(args) -> Dict[str, str]:
    skip = {"config", "manifest"}
    # absolute, so a manifest replays from any working directory
    return {k: (str(v.resolve()) if not isinstance(v, list) else [str(x.resolve()) for x in v])
            for k, v in vars(args).items()
            if k not in skip and (isinstance(v, Path) or (isinstance(v, list) and v and isinstance(v[0], Path)))}


def replay_argv(command: str, opts: dict, paths: dict) -> List[str]:
    """Explicit argv that reproduces a run without any config file."""
    argv = [command]
    positional = {"evaluate": ("pred", "label")}.get(command, ())
    for name in positional:
        argv.append(paths[name])
    for name, value in paths.items():
        if name in positional:
            continue
        argv.append(_flag(name))
        argv.extend(value if isinstance(value, list) else [value])
    for name, value in opts.items():
        if value is not None:
            argv.extend([_flag(name), repr(value) if isinstance(value, float) else str(value)])
    return argv


def write_manifest(path: Path, command: str, opts: dict, paths: dict, outputs: List[Path], started: float):
    manifest = {
        "command": command,
        "config": opts,
        "paths": paths,
        "outputs": [str(Path(p).resolve()) for p in outputs],
        "seed": opts.get("seed"),
        "version": version_string(),
        "duration_s": round(time.perf_counter() - started, 3),
        "argv": replay_argv(command, opts, paths),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("manifest written to %s", path)


# -- commands ----------------------------------------------------------------------

def _labels_in(path: Path, rate_hz: Optional[float] = LABEL_RATE_HZ) -> Dict[str, LabelTrack]:
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise InputError(f"no .csv files in {path}")
        return {f.stem: read_labels(f, rate_hz) for f in files}
    return {path.stem: read_labels(path, rate_hz)}


def cmd_gen_data(args, opts):
    spec = SyntheticSpec(**{k: opts[k] for k in OPTIONS["gen-data"]})
    return write_dataset(args.out_dir, generate_synthetic(spec))


def cmd_train(args, opts):
    dataset = read_dataset(args.data)
    validation = read_dataset(args.val_data) if args.val_data else None
    cfg = TrainConfig(
        loss_kind=opts["loss"], learning_rate=opts["learning_rate"], epochs=opts["epochs"],
        clip_seconds=opts["clip_seconds"], sample_rate_hz=opts["sample_rate_hz"],
        batch_clips=opts["batch_clips"], grad_clip_norm=opts["grad_clip_norm"], seed=opts["seed"],
        validation_fraction=opts["validation_fraction"], shard_clips=opts["shard_clips"],
    )
    fs0 = dataset[0][0]
    mc = ModelConfig(visual_dim=fs0.visual.shape[1], audio_dim=fs0.audio.shape[1],
                     hidden_dim=opts["hidden_dim"], init_seed=opts["seed"], head_order=opts["head_order"])
    ck, history = train(dataset, cfg, mc, validation=validation, threads=opts["threads"])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out, ck)
    history_path = args.history or args.out.with_name(args.out.name + ".history.csv")
    history_path.write_text(history.to_csv())
    best = history.best_epoch
    if best >= 0:
        logger.warning("best epoch %d: train loss %.6f, validation %.6f",
                       best, history.train_loss[best], history.val_score[best])
    return [args.out, history_path]


def cmd_predict(args, opts):
    ck = load_checkpoint(args.checkpoint)
    if opts["strategy"] is None:
        opts["strategy"] = ck.training_meta.get("strategy") or PredictionStrategy.SPARSE_1HZ_INTERP.value
    try:
        strategy = PredictionStrategy(opts["strategy"])
    except ValueError:
        raise UsageError(f"unknown strategy {opts['strategy']!r}") from None
    files = sorted(args.features.glob("*.eevf")) if args.features.is_dir() else [args.features]
    if not files:
        raise InputError(f"no .eevf files in {args.features}")
    features = [read_features(f) for f in files]
    tracks = predict_many(features, ck.to_params(), strategy, opts["threads"])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for f, fs, track in zip(files, features, tracks):
        out = args.out_dir / (f.stem + ".csv")
        write_labels(out, LabelTrack(fs.video_id, track))
        outputs.append(out)
    return outputs


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_evaluate(args, opts):
    preds, labels = _labels_in(args.pred), _labels_in(args.label)
    if args.pred.is_dir() or args.label.is_dir():
        missing = sorted(set(preds) - set(labels))
        if missing:
            raise InputError(f"no labels for predictions: {', '.join(missing)}")
        pairs = [(k, preds[k], labels[k]) for k in sorted(preds)]
    else:
        (k, p), = preds.items()
        (_, y), = labels.items()
        pairs = [(k, p, y)]
    reports = [(k, score_video(p.track, y.track)) for k, p, y in pairs]
    mean = score_dataset([r for _, r in reports])
    print(f"dataset_mean {mean:.6f}")
    if args.out is None:
        return []
    lines = [",".join(["video_id"] + LABEL_HEADER[1:] + ["mean"])]
    for k, r in reports:
        lines.append(",".join([k] + [_fmt(v) for v in r.per_emotion] + [_fmt(r.per_video_mean)]))
    per_emotion = [math.fsum(r.per_emotion[j] for _, r in reports) / len(reports) for j in range(15)]
    lines.append(",".join(["dataset_mean"] + [_fmt(v) for v in per_emotion] + [_fmt(mean)]))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(lines) + "\n")
    return [args.out]


def cmd_filter(args, opts):
    lt = read_labels(args.input, rate_hz=None)
    kind = opts["kind"]
    if kind not in FILTERS:
        raise UsageError(f"--kind must be one of {sorted(FILTERS)}")
    kw = {"butterworth": ("cutoff_norm", "order"), "median": ("window",),
          "gaussian": ("sigma_samples",)}[kind]
    out = FILTERS[kind](lt.track, **{k: opts[k] for k in kw})
    write_labels(args.out, LabelTrack(lt.video_id, out))
    return [args.out]


def cmd_interpolate(args, opts):
    lt = read_labels(args.input, rate_hz=None)
    out = linear_interpolate(lt.track, opts["target_hz"], n_samples=opts["n_samples"])
    write_labels(args.out, LabelTrack(lt.video_id, out))
    return [args.out]


def cmd_ensemble(args, opts):
    if all(p.is_dir() for p in args.inputs):
        sets = [_labels_in(p) for p in args.inputs]
        keys = sorted(set.intersection(*(set(s) for s in sets)))
        if not keys:
            raise InputError("input directories share no file names")
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = []
        for k in keys:
            out = args.out / (k + ".csv")
            write_labels(out, LabelTrack(k, ensemble([s[k].track for s in sets])))
            outputs.append(out)
        return outputs
    if any(p.is_dir() for p in args.inputs):
        raise UsageError("--inputs must be all files or all directories")
    tracks = [read_labels(p).track for p in args.inputs]
    write_labels(args.out, LabelTrack(args.out.stem, ensemble(tracks)))
    return [args.out]


def cmd_grad_check(args, opts):
    errors = run_suite(seed=opts["seed"], epsilon=opts["epsilon"])
    width = max(len(k) for k in errors)
    for name, err in errors.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err < THRESHOLD else 'FAIL'}")
    worst = max(errors.values())
    if not worst < THRESHOLD:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e} >= {THRESHOLD:g}")
    return None


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "filter": cmd_filter,
    "interpolate": cmd_interpolate,
    "ensemble": cmd_ensemble,
    "grad-check": cmd_grad_check,
}


def _default_manifest(args) -> Optional[Path]:
    if getattr(args, "manifest", None) is not None:
        return args.manifest
    if getattr(args, "out_dir", None) is not None:
        return args.out_dir / "manifest.json"
    if getattr(args, "out", None) is not None:
        return args.out.with_name(args.out.name + ".manifest.json")
    return None


def run(args) -> None:
    started = time.perf_counter()
    opts = resolve_options(args)
    outputs = COMMANDS[args.command](args, opts)
    if outputs:
        if args.command == "train" and args.history is None:
            args.history = outputs[1]
        manifest = _default_manifest(args)
        write_manifest(manifest, args.command, opts, _paths(args), outputs, started)


def _replay(path: Path) -> int:
    try:
        manifest = json.loads(Path(path).read_text())
        argv = manifest["argv"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"manifest {path}: {e}") from None
    logger.info("replaying %s", " ".join(argv))
    return main(argv)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return _replay(args.manifest)
        run(args)
        return EXIT_OK
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"eevnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"eevnet: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EEVError, OSError) as e:
        print(f"eevnet: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
