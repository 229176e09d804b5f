import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eevnet.dataio import FeatureSequence
from eevnet.errors import InputError, NumericError
from eevnet.model import ModelConfig, init_params, params_from_arrays
from eevnet.signal_ops import SampledTrack
from eevnet.synthetic import SyntheticSpec, generate_synthetic
from eevnet.trainer import (
    AdamState,
    PredictionStrategy,
    TrainConfig,
    TrainHistory,
    adam_step,
    batch_gradient,
    clip_by_global_norm,
    ensemble,
    make_clips,
    predict_video,
    split_videos,
    train,
)

SMALL = ModelConfig(visual_dim=4, audio_dim=3, hidden_dim=3, init_seed=0)


def tiny_data(n=3, seconds=20, seed=0):
    return generate_synthetic(SyntheticSpec(n_videos=n, duration_s=seconds, visual_dim=4, audio_dim=3, seed=seed))


# -- Adam ------------------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    w = np.array([0.5, -1.0])
    new, st_ = adam_step(w, np.zeros(2), AdamState.zeros(2), TrainConfig())
    assert np.array_equal(new, w) and st_.step == 1


def test_adam_first_step_magnitude():
    cfg = TrainConfig(learning_rate=0.1)
    new, _ = adam_step(np.zeros(1), np.ones(1), AdamState.zeros(1), cfg)
    # bias correction makes the first step lr * g / (|g| + eps)
    assert new[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_global_norm_clipping():
    g = np.array([6.0, 8.0])
    assert np.allclose(clip_by_global_norm(g, 1.0), [0.6, 0.8], rtol=0, atol=1e-15)
    assert np.array_equal(clip_by_global_norm(g, 20.0), g)


def test_adam_non_finite_gradient():
    with pytest.raises(NumericError, match="step 1"):
        adam_step(np.zeros(3), np.array([0.0, np.nan, 1.0]), AdamState.zeros(3), TrainConfig())


def test_adam_on_model_params_keeps_kind():
    p = init_params(SMALL)
    g = params_from_arrays(SMALL, [np.ones_like(a) for a in p.arrays()])
    new, st_ = adam_step(p, g, AdamState.zeros(p.flatten().size), TrainConfig())
    assert type(new) is type(p) and st_.step == 1
    assert np.all(new.flatten() < p.flatten())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.floats(0.01, 10), st.integers(0, 2**31))
def test_clipped_norm_bound(n, max_norm, seed):
    g = np.random.default_rng(seed).normal(size=n) * 10
    assert np.linalg.norm(clip_by_global_norm(g, max_norm)) <= max_norm * (1 + 1e-12)


def test_train_config_validation():
    with pytest.raises(InputError):
        TrainConfig(loss_kind="mse")
    with pytest.raises(InputError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InputError):
        TrainConfig(epochs=-1)
    cfg = TrainConfig(epochs=3, loss_kind="ccc")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- data preparation -------------------------------------------------------------------

def test_make_clips_shapes():
    data = tiny_data(n=2, seconds=25)
    sparse = make_clips(data, 1.0, 10)
    assert [c.label.shape for c in sparse] == [(10, 15), (10, 15), (5, 15)] * 2
    dense = make_clips(data, 6.0, 10)
    assert all(c.visual.shape[1] == 4 and c.audio.shape[1] == 3 for c in dense)
    assert sum(c.label.shape[0] for c in dense) == 2 * 150


def test_split_videos():
    tr, va = split_videos(10, 0.2, seed=3)
    assert len(va) == 2 and sorted(tr + va) == list(range(10))
    assert split_videos(10, 0.2, seed=3) == (tr, va)
    assert split_videos(1, 0.5, seed=0) == ([0], [])


def test_batch_gradient_independent_of_shard_size_and_pool():
    from concurrent.futures import ThreadPoolExecutor

    clips = make_clips(tiny_data(), 1.0, 10)[:7]
    p = init_params(SMALL)
    g1, l1 = batch_gradient(p, clips, TrainConfig(shard_clips=7))
    g2, l2 = batch_gradient(p, clips, TrainConfig(shard_clips=2))
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15) and l1 == pytest.approx(l2, rel=1e-12)
    with ThreadPoolExecutor(3) as pool:
        g3, l3 = batch_gradient(p, clips, TrainConfig(shard_clips=2), pool)
    assert g3.tobytes() == g2.tobytes() and l3 == l2


# -- training ------------------------------------------------------------------------------

def test_zero_epochs_returns_initial_params():
    ck, h = train(tiny_data(), TrainConfig(epochs=0), SMALL)
    assert h.train_loss == [] and h.best_epoch == -1
    assert np.array_equal(ck.weights, init_params(SMALL).flatten().astype(np.float32))


def test_training_is_deterministic_across_threads():
    data = tiny_data()
    cfg = TrainConfig(epochs=2, clip_seconds=10, batch_clips=3, shard_clips=1)
    a, ha = train(data, cfg, SMALL, threads=1)
    b, hb = train(data, cfg, SMALL, threads=3)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert ha.train_loss == hb.train_loss and ha.val_score == hb.val_score


def test_training_loss_decreases():
    spec = SyntheticSpec(n_videos=1, duration_s=60, visual_dim=4, audio_dim=3, noise_amp=0.0,
                         dropout_prob=0.0, seed=1)
    cfg = TrainConfig(epochs=50, clip_seconds=30, learning_rate=1e-3)
    _, h = train(generate_synthetic(spec), cfg, SMALL, validation=[])
    loss = np.convolve(h.train_loss, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(loss) < 0)
    # without validation the best epoch is the one with the lowest train loss
    assert h.best_epoch == int(np.argmin(h.train_loss))
    assert all(np.isnan(h.val_score))


def test_history_csv():
    h = TrainHistory([0.5, 0.25], [0.1, float("nan")], 0)
    assert h.to_csv().splitlines() == ["epoch,train_loss,val_pearson,best", "0,0.5,0.1,1", "1,0.25,,0"]


def test_training_meta_records_strategy():
    ck, _ = train(tiny_data(), TrainConfig(epochs=1, clip_seconds=10, sample_rate_hz=6), SMALL)
    assert ck.training_meta["strategy"] == "dense6hz_10s"
    assert ck.training_meta["loss_kind"] == "l1"


# -- prediction ------------------------------------------------------------------------------

def test_strategy_for_sampling():
    assert PredictionStrategy.for_sampling(1, 60) is PredictionStrategy.SPARSE_1HZ_INTERP
    assert PredictionStrategy.for_sampling(6, 10) is PredictionStrategy.DENSE_6HZ_10S
    assert PredictionStrategy.for_sampling(6, 60) is PredictionStrategy.DENSE_6HZ_60S
    with pytest.raises(InputError):
        PredictionStrategy.for_sampling(2, 10)


@pytest.mark.parametrize("strategy", list(PredictionStrategy))
def test_predict_video_on_label_grid(strategy):
    (fs, lt), = tiny_data(n=1, seconds=70)
    out = predict_video(fs, init_params(SMALL), strategy)
    assert out.rate_hz == 6.0 and out.values.shape == (len(fs.timestamps_ms), 15)
    assert np.all((out.values > 0) & (out.values < 1))


def test_sparse_prediction_exact_at_knots():
    (fs, _), = tiny_data(n=1, seconds=20)
    p = init_params(SMALL)
    dense = predict_video(fs, p, PredictionStrategy.SPARSE_1HZ_INTERP)
    from eevnet.model import model_forward
    v, a = fs.tracks()
    sparse = model_forward(v.values[::6], a.values[::6], p)
    assert np.array_equal(dense.values[::6], sparse)


def test_constant_model_gives_constant_track():
    p = init_params(SMALL)
    arrays = [np.zeros_like(a) for a in p.arrays()]
    arrays[-1] = np.full(15, 2.0)  # gate bias
    arrays[-3] = np.full(15, 0.5)  # projection bias
    const = params_from_arrays(SMALL, arrays)
    (fs, _), = tiny_data(n=1, seconds=30)
    for s in PredictionStrategy:
        out = predict_video(fs, const, s).values
        assert np.ptp(out) == 0.0


def test_short_video_shrinks_window():
    T = 20
    fs = FeatureSequence("short", np.rint(np.arange(T) * 1000 / 6), np.ones((T, 4)), np.ones((T, 3)))
    out = predict_video(fs, init_params(SMALL), PredictionStrategy.DENSE_6HZ_60S)
    assert out.values.shape == (T, 15)


# -- ensembling --------------------------------------------------------------------------------

def test_ensemble_properties():
    rng = np.random.default_rng(0)
    a = SampledTrack(6.0, rng.uniform(size=(10, 15)))
    b = SampledTrack(6.0, rng.uniform(size=(12, 15)))
    assert np.array_equal(ensemble([a]).values, a.values)
    assert np.array_equal(ensemble([a, a, a]).values, a.values)
    e = ensemble([a, b])
    assert len(e) == 10 and np.allclose(e.values, (a.values + b.values[:10]) / 2, rtol=0, atol=1e-15)
    assert np.array_equal(ensemble([b, a]).values, e.values)
    assert np.all(e.values >= np.minimum(a.values, b.values[:10]))
    two = ensemble([SampledTrack(6.0, np.full((4, 15), 0.2)), SampledTrack(6.0, np.full((4, 15), 0.4))])
    assert np.allclose(two.values, 0.3, rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_ensemble_permutation_invariant_and_bounded(k, seed):
    rng = np.random.default_rng(seed)
    tracks = [SampledTrack(6.0, rng.uniform(size=(6, 15))) for _ in range(k)]
    e = ensemble(tracks).values
    perm = rng.permutation(k)
    assert np.array_equal(ensemble([tracks[i] for i in perm]).values, e)
    stack = np.stack([t.values for t in tracks])
    assert np.all(e >= stack.min(axis=0)) and np.all(e <= stack.max(axis=0))
    assert np.allclose(e, stack.mean(axis=0), rtol=0, atol=1e-15)
    with pytest.raises(InputError):
        ensemble([])
