import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eevnet.errors import DegenerateVarianceError, DimensionError, InputError
from eevnet.losses import ccc_loss, compute_loss, kl_loss, l1_loss
from eevnet.metrics import (
    ScoreReport,
    ccc,
    ccc_columns,
    moments,
    pearson,
    score_dataset,
    score_video,
)


def test_l1_examples():
    assert l1_loss(np.full((3, 15), 0.4), np.full((3, 15), 0.4)).value == 0.0
    rep = l1_loss(np.array([[0.2, 0.5]]), np.array([[0.5, 0.1]]))
    assert rep.value == pytest.approx(0.35, abs=1e-15)
    assert np.array_equal(rep.d_pred, [[-0.5, 0.5]])
    assert l1_loss(np.array([[0.5, 0.1]]), np.array([[0.2, 0.5]])).value == rep.value


def test_l1_subgradient_zero_at_ties():
    assert np.all(l1_loss(np.full((2, 15), 0.3), np.full((2, 15), 0.3)).d_pred == 0)


def test_kl_examples():
    y = np.array([[0.3, 0.7]])
    assert kl_loss(y, y).value == pytest.approx(0.0, abs=1e-15)
    eps = 1e-6
    rep = kl_loss(np.array([[1 - eps]]), np.array([[1.0]]), eps=eps)
    assert rep.value == pytest.approx(math.log(1 / (1 - eps)), rel=1e-12)
    rep = kl_loss(np.array([[0.25]]), np.array([[0.5]]))
    assert rep.value == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-12)
    assert rep.value == pytest.approx(0.14384, abs=1e-5)


def test_kl_handles_zero_and_one_labels():
    rep = kl_loss(np.array([[0.0, 1.0, 0.5]]), np.array([[0.0, 1.0, 0.0]]))
    assert np.isfinite(rep.value) and rep.value >= 0
    assert np.all(np.isfinite(rep.d_pred))


def test_kl_rejects_large_eps():
    with pytest.raises(InputError):
        kl_loss(np.zeros((1, 1)), np.zeros((1, 1)), eps=0.01)


def test_ccc_loss_examples():
    x = np.array([[1.0], [2.0], [3.0]])
    assert ccc_loss(x, x).value == pytest.approx(0.0, abs=1e-15)
    assert ccc_loss(x, 2 * x).value == pytest.approx(1 - 4 / 11, abs=1e-12)
    rep = ccc_loss(x, np.ones((3, 1)))
    assert rep.value == 1.0 and np.all(rep.d_pred == 0)


def test_ccc_loss_needs_two_rows():
    with pytest.raises(InputError):
        ccc_loss(np.zeros((1, 15)), np.zeros((1, 15)))


def test_loss_shape_mismatch():
    for kind in ("l1", "kl", "ccc"):
        with pytest.raises(DimensionError):
            compute_loss(kind, np.zeros((3, 15)), np.zeros((4, 15)))


def test_batched_loss_is_mean_of_clips():
    rng = np.random.default_rng(0)
    p, y = rng.uniform(size=(3, 5, 15)), rng.uniform(size=(3, 5, 15))
    for kind in ("l1", "kl", "ccc"):
        whole = compute_loss(kind, p, y)
        parts = [compute_loss(kind, p[i], y[i]) for i in range(3)]
        assert whole.value == pytest.approx(np.mean([r.value for r in parts]), rel=1e-12)
        assert np.allclose(whole.d_pred, np.stack([r.d_pred for r in parts]) / 3, rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_loss_ranges_and_ccc_bound(T, seed):
    rng = np.random.default_rng(seed)
    p, y = rng.uniform(size=(T, 15)), rng.uniform(size=(T, 15))
    assert 0 <= l1_loss(p, y).value <= 1
    assert kl_loss(p, y).value >= 0
    assert 0 <= ccc_loss(p, y).value <= 2
    c = ccc_columns(p, y)
    for j in range(15):
        assert abs(c[j]) <= abs(pearson(p[:, j], y[:, j])) + 1e-12


def test_pearson_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert pearson(x, x) == 1.0
    assert pearson(x, 3 * x + 2) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -3 * x + 2) == pytest.approx(-1.0, abs=1e-15)
    assert pearson(x, [1.0, 2.0, 4.0]) == pytest.approx(9 / math.sqrt(84), abs=1e-15)
    assert pearson(x, [1.0, 2.0, 4.0]) == pytest.approx(0.98198, abs=1e-5)


def test_pearson_degenerate():
    with pytest.raises(DegenerateVarianceError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(InputError):
        pearson([1.0], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 50), st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 2**31))
def test_pearson_affine_invariance(n, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n)
    assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-12


def test_ccc_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert ccc(x, x) == 1.0
    assert ccc(x, 2 * x) == pytest.approx(4 / 11, abs=1e-15)
    c = 1.5
    var = moments(x, x).var_x
    assert ccc(x, x + c) == pytest.approx(2 * var / (2 * var + c * c), abs=1e-15)


def test_moment_summary_invariant():
    rng = np.random.default_rng(1)
    m = moments(rng.normal(size=20), rng.normal(size=20))
    assert m.var_x >= 0 and m.var_y >= 0 and m.n == 20
    assert abs(m.cov_xy) <= math.sqrt(m.var_x * m.var_y) + 1e-12


def test_ccc_loss_agrees_with_metric():
    rng = np.random.default_rng(2)
    p, y = rng.uniform(size=(30, 15)), rng.uniform(size=(30, 15))
    expected = np.mean([1 - ccc(p[:, j], y[:, j]) for j in range(15)])
    assert abs(ccc_loss(p, y).value - expected) <= 1e-12


def test_score_video_examples():
    rng = np.random.default_rng(0)
    y = rng.uniform(size=(50, 15))
    assert score_video(y, y).per_video_mean == pytest.approx(1.0, abs=1e-15)
    y2 = y.copy()
    y2[:, 3] = 0.4
    rep = score_video(rng.uniform(size=(50, 15)) * 0 + y, y2)
    assert rep.per_emotion[3] == 0.0 and rep.n_valid_emotions == 14
    assert np.allclose(np.delete(rep.per_emotion, 3), 1.0)


def test_score_video_null_distribution():
    means = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        means.append(score_video(rng.uniform(size=(3000, 15)), rng.uniform(size=(3000, 15))).per_video_mean)
    assert all(abs(m) < 0.1 for m in means)


def test_score_video_symmetric_and_truncates():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(40, 15)), rng.uniform(size=(37, 15))
    assert np.array_equal(score_video(a, b).per_emotion, score_video(b, a).per_emotion)
    assert np.array_equal(score_video(a, b).per_emotion, score_video(a[:37], b).per_emotion)
    with pytest.raises(InputError):
        score_video(a[:1], b[:1])


def test_score_dataset():
    r = lambda m: ScoreReport(np.full(15, m), m, 15)  # noqa: E731
    assert score_dataset([r(0.25)]) == 0.25
    assert score_dataset([r(0.2), r(0.4)]) == pytest.approx(0.3, abs=1e-15)
    assert score_dataset([r(0.4), r(0.2), r(0.1)]) == score_dataset([r(0.1), r(0.4), r(0.2)])
    with pytest.raises(InputError):
        score_dataset([])
