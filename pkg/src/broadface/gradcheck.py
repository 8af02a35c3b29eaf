"""Finite-difference checks of the analytic gradients (backs ``bfe grad-check``)."""

from __future__ import annotations

import math

import numpy as np

from . import encoder as enc_mod
from .losses import MarginConfig, batch_loss, cosine_logits, margin_loss

KINDS = ("plain", "cosface", "arcface")


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of the scalar ``f()`` w.r.t. ``x``; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``|a - n| / max(|a|, |n|)`` over the whole array (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def _near_fold(e, y, W, cfg: MarginConfig, gap: float = 1e-3) -> bool:
    # the ArcFace fallback is not continuous at cos = cos(pi - m)
    if cfg.kind != "arcface" or cfg.margin == 0:
        return False
    c = float(cosine_logits(e, W)[y])
    return abs(c - math.cos(math.pi - cfg.margin)) < gap


def check_margin_loss(seed: int, kind: str, C: int = 6, D: int = 5) -> float:
    """Worst relative error over the embedding and classifier gradients of one random instance."""
    rng = np.random.default_rng(seed)
    margin = {"plain": 0.0, "cosface": 0.35, "arcface": 0.5}[kind]
    cfg = MarginConfig(kind, margin, float(rng.uniform(2.0, 16.0)))
    y = int(rng.integers(C))
    while True:
        e = rng.standard_normal(D)
        W = rng.standard_normal((C, D))
        if not _near_fold(e, y, W, cfg):
            break
    out = margin_loss(e, y, W, cfg)
    num_e = central_difference(lambda: margin_loss(e, y, W, cfg).loss, e)
    num_W = central_difference(lambda: margin_loss(e, y, W, cfg).loss, W)
    return max(relative_error(out.grad_embedding, num_e), relative_error(out.grad_rows, num_W))


def check_encoder_loss(seed: int, kind: str = "arcface", sizes=(4, 6, 3), C: int = 5, n: int = 3) -> float:
    """Worst relative error over every encoder parameter array of encoder + batch loss."""
    rng = np.random.default_rng(seed)
    cfg = MarginConfig(kind, {"plain": 0.0, "cosface": 0.35, "arcface": 0.5}[kind], 8.0)
    enc = enc_mod.init_encoder(sizes, seed=seed)
    for p in enc.params().values():
        p += 0.3 * rng.standard_normal(p.shape)
    X = rng.standard_normal((n, sizes[0]))
    labels = rng.integers(C, size=n)
    W = rng.standard_normal((C, sizes[-1]))

    def loss() -> float:
        E, _ = enc_mod.forward(enc, X)
        return batch_loss(E, labels, W, cfg)[0]

    E, trace = enc_mod.forward(enc, X)
    if any(_near_fold(E[i], labels[i], W, cfg) for i in range(n)):
        return check_encoder_loss(seed + 10_000, kind, sizes, C, n)
    _, grad_E, _ = batch_loss(E, labels, W, cfg)
    grads = enc_mod.backward(enc, trace, grad_E)
    return max(relative_error(grads[k], central_difference(loss, p)) for k, p in enc.params().items())


def run_suite(seeds) -> dict[str, float]:
    """Max relative error per check over ``seeds``."""
    worst = {f"margin_loss[{k}]": 0.0 for k in KINDS}
    worst["encoder+loss"] = 0.0
    for seed in seeds:
        for k in KINDS:
            worst[f"margin_loss[{k}]"] = max(worst[f"margin_loss[{k}]"], check_margin_loss(seed, k))
        worst["encoder+loss"] = max(worst["encoder+loss"], check_encoder_loss(seed, KINDS[seed % 3]))
    return worst
