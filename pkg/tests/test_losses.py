import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from broadface.linalg import NearZeroNorm
from broadface.losses import MarginConfig, batch_loss, cosine_logits, margin_loss

from oracles import central_difference, naive_loss, rel_error

CONFIGS = [
    MarginConfig("plain", 0.0, 1.0),
    MarginConfig("plain", 0.0, 16.0),
    MarginConfig("cosface", 0.35, 30.0),
    MarginConfig("arcface", 0.5, 64.0),
    MarginConfig("arcface", 0.2, 8.0),
]


def _instance(seed, C=6, D=5):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(D), int(rng.integers(C)), rng.standard_normal((C, D))


def test_cosine_logits_examples():
    W = np.array([[0.0, 3.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    np.testing.assert_allclose(cosine_logits([0, 5, 0], W), [1, 0, 0], atol=1e-15)
    same = cosine_logits([0.3, -1.0, 2.0], np.tile([1.0, 2.0, 3.0], (4, 1)))
    assert np.all(same == same[0])
    np.testing.assert_array_equal(cosine_logits([1, 0], [[1, 0], [-1, 0]]), [1, -1])


def test_cosine_logits_rejects_zero_vectors():
    with pytest.raises(NearZeroNorm):
        cosine_logits([0, 0], [[1, 0]])
    with pytest.raises(NearZeroNorm):
        cosine_logits([1, 0], [[1, 0], [0, 0]])


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="hinge"), dict(scale=0.0), dict(kind="arcface", margin=2.0), dict(kind="cosface", margin=1.0)],
)
def test_margin_config_validation(kwargs):
    with pytest.raises(ValueError):
        MarginConfig(**kwargs)


def test_equal_logits_give_ln2():
    W = np.array([[1.0, 1.0], [1.0, -1.0]])
    out = margin_loss([1.0, 0.0], 0, W, MarginConfig("plain", 0.0, 5.0))
    assert out.loss == pytest.approx(math.log(2), abs=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_arcface_zero_margin_equals_plain(seed):
    e, y, W = _instance(seed)
    a = margin_loss(e, y, W, MarginConfig("arcface", 0.0, 1.0))
    p = margin_loss(e, y, W, MarginConfig("plain", 0.0, 1.0))
    assert abs(a.loss - p.loss) < 1e-12
    np.testing.assert_allclose(a.grad_embedding, p.grad_embedding, atol=1e-12, rtol=0)
    np.testing.assert_allclose(a.grad_rows, p.grad_rows, atol=1e-12, rtol=0)


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.kind}-{c.margin}-{c.scale}")
@pytest.mark.parametrize("seed", range(8))
def test_loss_matches_scalar_formula(cfg, seed):
    e, y, W = _instance(seed)
    assert margin_loss(e, y, W, cfg).loss == pytest.approx(naive_loss(e, y, W, cfg.kind, cfg.margin, cfg.scale), rel=1e-10)


def test_arcface_fold_branch_matches_formula():
    # target nearly opposite the embedding so theta + m > pi
    W = np.array([[-1.0, 0.05], [0.0, 1.0], [1.0, 0.0]])
    e = np.array([1.0, 0.0])
    cfg = MarginConfig("arcface", 0.5, 4.0)
    assert margin_loss(e, 0, W, cfg).loss == pytest.approx(naive_loss(e, 0, W, "arcface", 0.5, 4.0), rel=1e-12)


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.kind}-{c.margin}-{c.scale}")
@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(cfg, seed):
    e, y, W = _instance(100 + seed)
    out = margin_loss(e, y, W, cfg)
    num_e = central_difference(lambda: margin_loss(e, y, W, cfg).loss, e)
    num_W = central_difference(lambda: margin_loss(e, y, W, cfg).loss, W)
    assert rel_error(out.grad_embedding, num_e) < 1e-5
    assert rel_error(out.grad_rows, num_W) < 1e-5


def test_batch_loss_examples():
    rng = np.random.default_rng(4)
    W = rng.standard_normal((5, 3))
    E = rng.standard_normal((3, 3))
    y = np.array([0, 3, 1])
    cfg = MarginConfig()
    one = margin_loss(E[0], 0, W, cfg)
    loss1, gE1, gW1 = batch_loss(E[:1], y[:1], W, cfg)
    assert loss1 == one.loss
    np.testing.assert_array_equal(gE1[0], one.grad_embedding)
    np.testing.assert_array_equal(gW1, one.grad_rows)

    loss2, _, gW2 = batch_loss(np.vstack([E[0], E[0]]), [0, 0], W, cfg)
    assert loss2 == pytest.approx(one.loss, abs=1e-12)
    np.testing.assert_allclose(gW2, one.grad_rows, atol=1e-12)

    direct = sum(margin_loss(E[i], y[i], W, cfg).loss for i in range(3)) / 3
    assert abs(batch_loss(E, y, W, cfg)[0] - direct) < 1e-12
    with pytest.raises(ValueError):
        batch_loss(np.empty((0, 3)), [], W, cfg)


def test_invalid_label():
    with pytest.raises(ValueError):
        margin_loss([1.0, 0.0], 2, np.eye(2), MarginConfig())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-2, 1e2), st.sampled_from(CONFIGS))
def test_scale_invariance_in_embedding(seed, c, cfg):
    e, y, W = _instance(seed)
    assert abs(margin_loss(c * e, y, W, cfg).loss - margin_loss(e, y, W, cfg).loss) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(CONFIGS))
def test_target_row_step_decreases_loss(seed, cfg):
    e, y, W = _instance(seed)
    out = margin_loss(e, y, W, cfg)
    g = out.grad_rows[y]
    if np.linalg.norm(g) < 1e-9:
        return
    W2 = W.copy()
    W2[y] -= 1e-4 * g
    assert margin_loss(e, y, W2, cfg).loss < out.loss


@pytest.mark.parametrize("seed", range(10))
def test_plain_gradients_reconstruct_probabilities(seed):
    # for plain s=1 the cosine-space gradient is p - onehot; recover p from grad_rows
    e, y, W = _instance(seed)
    out = margin_loss(e, y, W, MarginConfig("plain", 0.0, 1.0))
    e_hat = e / np.linalg.norm(e)
    norms = np.linalg.norm(W, axis=1)
    W_hat = W / norms[:, None]
    # grad_rows[j] = G_j (e_hat - (e_hat . W_hat_j) W_hat_j) / |W_j|
    tangent = e_hat - (W_hat @ e_hat)[:, None] * W_hat
    G = np.einsum("jd,jd->j", out.grad_rows * norms[:, None], tangent) / np.einsum("jd,jd->j", tangent, tangent)
    p = G.copy()
    p[y] += 1.0
    assert abs(p.sum() - 1.0) < 1e-10
    assert np.all(p > 0)


@pytest.mark.parametrize("c", [1.0, -1.0, 1 - 1e-9, -1 + 1e-9])
def test_arcface_is_finite_at_extreme_cosines(c):
    theta = math.acos(c)
    W = np.array([[math.cos(theta), math.sin(theta)], [0.3, 0.7]])
    out = margin_loss([1.0, 0.0], 0, W, MarginConfig("arcface", 0.5, 64.0))
    assert math.isfinite(out.loss)
    assert np.all(np.isfinite(out.grad_embedding)) and np.all(np.isfinite(out.grad_rows))
