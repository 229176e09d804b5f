"""On-disk formats: EEVF features, label/prediction CSV, EEVM checkpoints.

EEVF (little-endian)::

    b"EEVF" | u32 version=1 | u16 id_len | id (UTF-8)
    | u32 T | u32 visual_dim | u32 audio_dim
    | T x ( i64 timestamp_ms | visual_dim x f32 | audio_dim x f32 )

EEVM (little-endian)::

    b"EEVM" | u32 version=1 | u32 meta_len | meta (UTF-8 JSON)
    | weight_count x f32   (canonical parameter order, see model.param_shapes)

The JSON holds ``config``, ``training_meta`` and ``weight_count``; it is
written with sorted keys and compact separators so that load -> save is
byte-identical.

Label CSV: header ``timestamp_ms,e01,...,e15``, one row per 6 Hz sample,
values with 6 decimals.

Arrays are float32 on disk and float64 in memory.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    InputError,
    IntegrityError,
    MagicError,
    ParseError,
    RangeError,
    TruncationError,
    VersionError,
)
from .model import ModelConfig, ModelParams, param_count, params_from_flat
from .signal_ops import SampledTrack

FEATURE_MAGIC = b"EEVF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"EEVM"
CHECKPOINT_VERSION = 1
LABEL_SCHEMA_VERSION = 1
LABEL_RATE_HZ = 6.0
N_EMOTIONS = 15
LABEL_HEADER = ["timestamp_ms"] + [f"e{i:02d}" for i in range(1, N_EMOTIONS + 1)]


@dataclass
class FeatureSequence:
    video_id: str
    timestamps_ms: np.ndarray
    visual: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.int64).reshape(-1)
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.audio = np.asarray(self.audio, dtype=np.float32)
        T = self.timestamps_ms.size
        if self.visual.ndim != 2 or self.audio.ndim != 2:
            raise DimensionError("visual and audio must be 2-D")
        if self.visual.shape[0] != T or self.audio.shape[0] != T:
            raise DimensionError(
                f"row counts differ: {T} timestamps, {self.visual.shape[0]} visual, "
                f"{self.audio.shape[0]} audio"
            )
        if T > 1 and np.any(np.diff(self.timestamps_ms) <= 0):
            raise InputError("timestamps must be strictly ascending")

    def __len__(self):
        return self.timestamps_ms.size

    @property
    def rate_hz(self) -> float:
        return infer_rate_hz(self.timestamps_ms)

    def tracks(self, rate_hz: float = None) -> Tuple[SampledTrack, SampledTrack]:
        """Visual and audio as float64 tracks at the stored rate."""
        rate = rate_hz if rate_hz is not None else self.rate_hz
        start = self.timestamps_ms[0] / 1000.0
        return (
            SampledTrack(rate, self.visual.astype(np.float64), start),
            SampledTrack(rate, self.audio.astype(np.float64), start),
        )


def infer_rate_hz(timestamps_ms) -> float:
    """Sampling rate implied by millisecond stamps, snapped to an integer when close."""
    ts = np.asarray(timestamps_ms, dtype=np.int64)
    if ts.size < 2:
        return LABEL_RATE_HZ
    r = 1000.0 * (ts.size - 1) / float(ts[-1] - ts[0])
    k = round(r)
    if k >= 1 and abs(r - k) < 0.02 * r:
        return float(k)
    return r


def timestamps_for(track: SampledTrack) -> np.ndarray:
    return np.rint(1000.0 * track.times).astype(np.int64)


@dataclass
class LabelTrack:
    video_id: str
    track: SampledTrack

    def __post_init__(self):
        v = self.track.values
        if v.shape[1] != N_EMOTIONS:
            raise DimensionError(f"label track needs {N_EMOTIONS} channels, got {v.shape[1]}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise RangeError("label values must lie in [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return self.track.values


# -- features -------------------------------------------------------------------

def _feature_dtype(dv: int, da: int) -> np.dtype:
    return np.dtype([("ts", "<i8"), ("v", "<f4", (dv,)), ("a", "<f4", (da,))])


def encode_features(fs: FeatureSequence) -> bytes:
    vid = fs.video_id.encode("utf-8")
    if len(vid) > 0xFFFF:
        raise InputError("video_id longer than 65535 bytes")
    T, dv = fs.visual.shape
    da = fs.audio.shape[1]
    head = FEATURE_MAGIC + struct.pack("<IH", FEATURE_VERSION, len(vid)) + vid
    head += struct.pack("<III", T, dv, da)
    rec = np.empty(T, dtype=_feature_dtype(dv, da))
    rec["ts"] = fs.timestamps_ms
    rec["v"] = fs.visual
    rec["a"] = fs.audio
    return head + rec.tobytes()


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int, field_name: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncationError(
                f"{self.what}: truncated at byte offset {len(self.data)} while reading "
                f"{field_name} (needs bytes {self.pos}..{end})",
                offset=len(self.data),
            )
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, field_name: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field_name))


def _check_magic(r: _Reader, magic: bytes, version: int):
    got = r.take(4, "magic")
    if got != magic:
        raise MagicError(f"{r.what}: bad magic {got!r}, expected {magic!r}")
    (ver,) = r.unpack("<I", "version")
    if ver != version:
        raise VersionError(f"{r.what}: unsupported version {ver}, expected {version}")


def decode_features(data: bytes) -> FeatureSequence:
    r = _Reader(data, "EEVF")
    _check_magic(r, FEATURE_MAGIC, FEATURE_VERSION)
    (n_id,) = r.unpack("<H", "id length")
    try:
        vid = r.take(n_id, "video id").decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"EEVF: video id is not UTF-8: {e}") from e
    T, dv, da = r.unpack("<III", "dimensions")
    dt = _feature_dtype(dv, da)
    body_start = r.pos
    need = T * dt.itemsize
    if len(data) - body_start < need:
        have = len(data) - body_start
        raise TruncationError(
            f"EEVF: truncated at byte offset {len(data)}: record {have // dt.itemsize} of {T} "
            f"incomplete ({have} of {need} payload bytes)",
            offset=len(data),
        )
    if len(data) - body_start > need:
        raise IntegrityError(f"EEVF: {len(data) - body_start - need} trailing bytes after {T} records")
    rec = np.frombuffer(data, dtype=dt, count=T, offset=body_start)
    try:
        return FeatureSequence(vid, rec["ts"].copy(), rec["v"].copy(), rec["a"].copy())
    except InputError as e:
        raise IntegrityError(f"EEVF: {e}") from e


def write_features(path, fs: FeatureSequence) -> None:
    Path(path).write_bytes(encode_features(fs))


def read_features(path) -> FeatureSequence:
    return decode_features(Path(path).read_bytes())


# -- labels ---------------------------------------------------------------------

def encode_labels(lt: LabelTrack) -> str:
    buf = io.StringIO()
    buf.write(",".join(LABEL_HEADER) + "\n")
    ts = timestamps_for(lt.track)
    for t, row in zip(ts, lt.values):
        buf.write(str(int(t)) + "".join(f",{v:.6f}" for v in row) + "\n")
    return buf.getvalue()


def decode_labels(text: str, video_id: str = "", rate_hz: Optional[float] = LABEL_RATE_HZ) -> LabelTrack:
    """Parse a label CSV. With ``rate_hz=None`` the rate is inferred from the stamps."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError("label CSV is empty")
    if [c.strip() for c in rows[0]] != LABEL_HEADER:
        raise ParseError(f"label CSV header must be {','.join(LABEL_HEADER)}")
    body = [(i + 2, row) for i, row in enumerate(rows[1:]) if any(c.strip() for c in row)]
    if not body:
        raise InputError("label CSV has no data rows")
    ts = np.empty(len(body), dtype=np.int64)
    vals = np.empty((len(body), N_EMOTIONS))
    for k, (line, row) in enumerate(body):
        if len(row) != len(LABEL_HEADER):
            raise ParseError(f"line {line}: expected {len(LABEL_HEADER)} cells, got {len(row)}")
        try:
            ts[k] = int(row[0])
        except ValueError:
            raise ParseError(f"line {line}: timestamp {row[0]!r} is not an integer") from None
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"line {line}: value {cell!r} is not numeric") from None
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"line {line}: value {v} outside [0, 1]", row=line)
            vals[k, j] = v
        if k and ts[k] <= ts[k - 1]:
            raise IntegrityError(f"line {line}: timestamps not strictly ascending")
    if rate_hz is None:
        rate_hz = infer_rate_hz(ts)
    return LabelTrack(video_id, SampledTrack(rate_hz, vals, ts[0] / 1000.0))


def write_labels(path, lt: LabelTrack) -> None:
    with open(path, "w", newline="") as f:
        f.write(encode_labels(lt))


def read_labels(path, rate_hz: Optional[float] = LABEL_RATE_HZ) -> LabelTrack:
    path = Path(path)
    return decode_labels(path.read_text(), video_id=path.stem, rate_hz=rate_hz)


# -- checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    weights: np.ndarray
    training_meta: Dict[str, str] = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        self.training_meta = {str(k): str(v) for k, v in self.training_meta.items()}
        n = param_count(self.config)
        if self.weights.size != n:
            raise IntegrityError(f"config implies {n} weights, got {self.weights.size}")

    @classmethod
    def from_params(cls, params: ModelParams, training_meta=None) -> "Checkpoint":
        return cls(params.config, params.flatten().astype(np.float32), dict(training_meta or {}))

    def to_params(self) -> ModelParams:
        return params_from_flat(self.config, self.weights.astype(np.float64))


def encode_checkpoint(ck: Checkpoint) -> bytes:
    meta = {
        "config": ck.config.to_dict(),
        "training_meta": ck.training_meta,
        "weight_count": int(ck.weights.size),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    head = CHECKPOINT_MAGIC + struct.pack("<II", ck.format_version, len(blob))
    return head + blob + ck.weights.astype("<f4").tobytes()


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data, "EEVM")
    _check_magic(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    (n_meta,) = r.unpack("<I", "metadata length")
    raw = r.take(n_meta, "metadata")
    try:
        meta = json.loads(raw.decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        declared = int(meta["weight_count"])
        training_meta = meta.get("training_meta", {})
    except InputError as e:
        raise IntegrityError(f"EEVM: invalid config: {e}") from e
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise ParseError(f"EEVM: unreadable metadata: {e}") from e
    expected = param_count(config)
    if declared != expected:
        raise IntegrityError(
            f"EEVM: config implies {expected} weights but metadata declares {declared}"
        )
    payload = len(data) - r.pos
    if payload < 4 * declared:
        raise TruncationError(
            f"EEVM: truncated at byte offset {len(data)}: {payload} of {4 * declared} weight bytes",
            offset=len(data),
        )
    if payload > 4 * declared:
        raise IntegrityError(f"EEVM: {payload - 4 * declared} trailing bytes after weights")
    weights = np.frombuffer(data, dtype="<f4", count=declared, offset=r.pos).astype(np.float32)
    if not np.all(np.isfinite(weights)):
        raise IntegrityError("EEVM: non-finite weights")
    return Checkpoint(config, weights, training_meta)


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# -- datasets on disk -----------------------------------------------------------

def write_dataset(directory, videos) -> List[Path]:
    """Write ``<id>.eevf`` and ``<id>.csv`` per (features, labels) pair."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for fs, lt in videos:
        fp = directory / f"{fs.video_id}.eevf"
        lp = directory / f"{fs.video_id}.csv"
        write_features(fp, fs)
        write_labels(lp, lt)
        written += [fp, lp]
    return written


def read_dataset(directory) -> List[Tuple[FeatureSequence, LabelTrack]]:
    directory = Path(directory)
    out = []
    for fp in sorted(directory.glob("*.eevf")):
        lp = fp.with_suffix(".csv")
        if not lp.exists():
            raise FormatError(f"no label file {lp.name} for {fp.name}")
        fs = read_features(fp)
        lt = read_labels(lp)
        lt.video_id = fs.video_id
        out.append((fs, lt))
    if not out:
        raise InputError(f"no .eevf files in {directory}")
    return out
