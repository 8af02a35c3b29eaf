"""Normalized softmax losses over cosine logits, with ArcFace/CosFace margins.

Every function returns exact gradients with respect to the raw (unnormalized)
embeddings and classifier rows; the L2 normalizations are differentiated
through, not treated as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionMismatch, normalize_rows, project_out

COS_CLAMP = 1.0 - 1e-7
MARGIN_KINDS = ("plain", "arcface", "cosface")


@dataclass(frozen=True)
class MarginConfig:
    kind: str = "arcface"
    margin: float = 0.5
    scale: float = 64.0

    def __post_init__(self):
        if self.kind not in MARGIN_KINDS:
            raise ValueError(f"unknown margin kind {self.kind!r}; expected one of {MARGIN_KINDS}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        limit = math.pi / 2 if self.kind == "arcface" else 1.0
        if self.kind != "plain" and not 0 <= self.margin < limit:
            raise ValueError(f"{self.kind} margin must be in [0, {limit:.4g}), got {self.margin}")


@dataclass
class LossOutput:
    loss: float
    grad_embedding: np.ndarray
    grad_rows: np.ndarray  # dense (C, D); every row enters the softmax denominator


def cosine_logits(e, W) -> np.ndarray:
    """Cosines between one embedding ``(D,)`` (or a batch ``(n, D)``) and every row of ``W``."""
    e = np.asarray(e, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    single = e.ndim == 1
    E = e[None, :] if single else e
    if E.shape[1] != W.shape[1]:
        raise DimensionMismatch(f"embedding dim {E.shape[1]} vs classifier dim {W.shape[1]}")
    E_hat, _ = normalize_rows(E, what="embedding")
    W_hat, _ = normalize_rows(W, what="classifier row")
    cos = np.clip(E_hat @ W_hat.T, -1.0, 1.0)
    return cos[0] if single else cos


def _target_logit(c: np.ndarray, cfg: MarginConfig) -> tuple[np.ndarray, np.ndarray]:
    """Margin-adjusted target cosine and its derivative w.r.t. the raw cosine."""
    if cfg.kind == "plain":
        return c.copy(), np.ones_like(c)
    if cfg.kind == "cosface":
        return c - cfg.margin, np.ones_like(c)

    m = cfg.margin
    cos_m, sin_m = math.cos(m), math.sin(m)
    inside = np.abs(c) < COS_CLAMP
    cc = np.clip(c, -COS_CLAMP, COS_CLAMP)
    sin_t = np.sqrt(1.0 - cc * cc)
    # cos(theta + m) = cos(theta) cos(m) - sin(theta) sin(m)
    psi = c * cos_m - sin_t * sin_m
    dpsi = cos_m + np.where(inside, cc / sin_t, 0.0) * sin_m
    # theta + m > pi: keep the logit monotone in theta
    fold = c < math.cos(math.pi - m)
    psi = np.where(fold, c - m * sin_m, psi)
    dpsi = np.where(fold, 1.0, dpsi)
    return psi, dpsi


def margin_terms(E, labels, W, cfg: MarginConfig, need_grad_E: bool = True):
    """Per-sample losses plus *summed* gradients for a batch.

    Returns ``(losses (n,), grad_E (n, D) or None, grad_W (C, D))`` where the
    gradients are of ``sum(losses)``.
    """
    E = np.asarray(E, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, C = E.shape[0], W.shape[0]
    if E.ndim != 2 or E.shape[1] != W.shape[1]:
        raise DimensionMismatch(f"embeddings {E.shape} vs classifier {W.shape}")
    if labels.shape != (n,):
        raise DimensionMismatch(f"{n} embeddings but labels of shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")

    E_hat, e_norm = normalize_rows(E, what="embedding")
    W_hat, w_norm = normalize_rows(W, what="classifier row")
    rows = np.arange(n)
    # scaled logits, built in place: z = s * cos
    z = E_hat @ W_hat.T
    psi, dpsi = _target_logit(z[rows, labels], cfg)
    z *= cfg.scale
    z[rows, labels] = cfg.scale * psi
    z_max = z.max(axis=1)
    z_target = z[rows, labels]
    z -= z_max[:, None]
    np.exp(z, out=z)
    denom = z.sum(axis=1)
    losses = (np.log(denom) + z_max) - z_target

    # dL/dcos, overwriting the softmax probabilities
    G = z
    G *= (cfg.scale / denom)[:, None]
    G[rows, labels] -= cfg.scale
    G[rows, labels] *= dpsi

    grad_E = project_out(G @ W_hat, E_hat, e_norm) if need_grad_E else None
    grad_W = project_out(G.T @ E_hat, W_hat, w_norm)
    return losses, grad_E, grad_W


def margin_loss(e, y: int, W, cfg: MarginConfig) -> LossOutput:
    W = np.asarray(W, dtype=np.float64)
    if not 0 <= int(y) < W.shape[0]:
        raise ValueError(f"label {y} out of range for {W.shape[0]} classes")
    e = np.asarray(e, dtype=np.float64)
    losses, gE, gW = margin_terms(e[None, :], [int(y)], W, cfg)
    return LossOutput(float(losses[0]), gE[0], gW)


def batch_loss(E, labels, W, cfg: MarginConfig):
    """Mean loss over a mini-batch; returns ``(loss, grad_E, grad_W)`` of that mean."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("batch_loss needs a non-empty (n, D) batch")
    losses, gE, gW = margin_terms(E, labels, W, cfg)
    n = E.shape[0]
    return float(losses.sum() / n), gE / n, gW / n
