"""Embedding queue, drift compensation and the split encoder/classifier update.

One training step (:func:`train_iteration`) does:

1. encode the mini-batch (the queue is never re-encoded),
2. take encoder gradients from the mini-batch loss only,
3. take classifier gradients from the mini-batch plus every compensated
   queued embedding (treated as constants),
4. step both parameter groups,
5. enqueue the mini-batch embeddings with a copy of their class rows *after*
   the update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc_mod
from .linalg import NORM_EPSILON, NearZeroNorm, row_norms
from .losses import MarginConfig, batch_loss, margin_terms
from .optim import SgdState, sgd_step


class NearZeroSnapshotNorm(NearZeroNorm):
    pass


@dataclass(frozen=True)
class QueueEntry:
    embedding: np.ndarray
    label: int
    rep_snapshot: np.ndarray
    iteration: int
    inputs: np.ndarray | None = None


@dataclass(frozen=True)
class CompensatedEmbedding:
    e_star: np.ndarray
    source: QueueEntry


class BroadQueue:
    """FIFO store of past embeddings and class-row snapshots.

    Stored column-wise as arrays (oldest first) so the classifier loss can
    consume the whole queue as one matrix. Raw inputs are kept only when
    ``retain_inputs`` is set, for drift diagnostics.
    """

    def __init__(self, capacity: int, dim: int, compensation_enabled: bool = True, retain_inputs: bool = False):
        if capacity < 0:
            raise ValueError(f"queue capacity must be non-negative, got {capacity}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.compensation_enabled = bool(compensation_enabled)
        self.retain_inputs = bool(retain_inputs)
        self.embeddings = np.empty((0, dim))
        self.labels = np.empty(0, dtype=np.int64)
        self.snapshots = np.empty((0, dim))
        self.iterations = np.empty(0, dtype=np.int64)
        self.inputs: np.ndarray | None = None

    def __len__(self) -> int:
        return self.labels.size

    def entry(self, i: int) -> QueueEntry:
        return QueueEntry(
            self.embeddings[i].copy(),
            int(self.labels[i]),
            self.snapshots[i].copy(),
            int(self.iterations[i]),
            None if self.inputs is None else self.inputs[i].copy(),
        )

    @property
    def entries(self) -> list[QueueEntry]:
        return [self.entry(i) for i in range(len(self))]


def enqueue_batch(q: BroadQueue, E, labels, W, iteration: int = 0, inputs=None) -> BroadQueue:
    """Append one entry per sample (snapshot = a copy of ``W[y]``) and evict the oldest."""
    if q.capacity == 0:
        return q
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(E)):
        raise ValueError("cannot enqueue non-finite embeddings")
    snaps = np.array(W[labels], dtype=np.float64, copy=True)
    keep = q.capacity
    q.embeddings = np.concatenate([q.embeddings, E])[-keep:]
    q.labels = np.concatenate([q.labels, labels])[-keep:]
    q.snapshots = np.concatenate([q.snapshots, snaps])[-keep:]
    q.iterations = np.concatenate([q.iterations, np.full(labels.size, iteration, dtype=np.int64)])[-keep:]
    if q.retain_inputs:
        if inputs is None:
            raise ValueError("queue retains inputs but none were given")
        X = np.asarray(inputs, dtype=np.float64)
        q.inputs = X[-keep:].copy() if q.inputs is None else np.concatenate([q.inputs, X])[-keep:]
    return q


def compensate(entry: QueueEntry, W, enabled: bool = True) -> CompensatedEmbedding:
    """``e* = e- + |e-| / |W-_y| * (W_y - W-_y)``."""
    snap_norm = float(np.linalg.norm(entry.rep_snapshot))
    if snap_norm <= NORM_EPSILON:
        raise NearZeroSnapshotNorm(f"snapshot of class {entry.label} has norm {snap_norm:g}")
    if not enabled:
        return CompensatedEmbedding(entry.embedding.copy(), entry)
    lam = np.linalg.norm(entry.embedding) / snap_norm
    return CompensatedEmbedding(entry.embedding + lam * (np.asarray(W[entry.label]) - entry.rep_snapshot), entry)


def compensated_embeddings(q: BroadQueue, W, enabled: bool | None = None) -> np.ndarray:
    """Vectorized :func:`compensate` over the whole queue.

    ``enabled`` overrides the queue's own flag (diagnostics use this).
    """
    enabled = q.compensation_enabled if enabled is None else enabled
    if len(q) == 0 or not enabled:
        return q.embeddings
    snap_norms = row_norms(q.snapshots)
    bad = np.flatnonzero(snap_norms <= NORM_EPSILON)
    if bad.size:
        raise NearZeroSnapshotNorm(f"queue entry {int(bad[0])} has snapshot norm {snap_norms[bad[0]]:g}")
    lam = row_norms(q.embeddings) / snap_norms
    return q.embeddings + lam[:, None] * (W[q.labels] - q.snapshots)


def encoder_loss(E, labels, W, cfg: MarginConfig):
    """Mini-batch loss and its gradient w.r.t. the embeddings (``W`` held fixed)."""
    loss, grad_E, _ = batch_loss(E, labels, W, cfg)
    return loss, grad_E


def classifier_loss(E, labels, q: BroadQueue, W, cfg: MarginConfig):
    """Loss over the mini-batch and the compensated queue; gradient w.r.t. ``W`` only."""
    if len(q) == 0:
        loss, _, grad_W = batch_loss(E, labels, W, cfg)
        return loss, grad_W
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("classifier_loss needs a non-empty mini-batch")
    union = np.concatenate([E, compensated_embeddings(q, W)])
    union_labels = np.concatenate([np.asarray(labels, dtype=np.int64), q.labels])
    losses, _, grad_W = margin_terms(union, union_labels, W, cfg, need_grad_E=False)
    n = union.shape[0]
    return float(losses.sum() / n), grad_W / n


@dataclass
class TrainState:
    """Everything one training step reads and writes."""

    encoder: enc_mod.MlpEncoder
    W: np.ndarray
    queue: BroadQueue
    encoder_opt: SgdState
    classifier_opt: SgdState
    iteration: int = 0


def train_iteration(
    state: TrainState,
    X,
    labels,
    cfg: MarginConfig,
    enqueue: bool = True,
    update_encoder: bool = True,
    update_classifier: bool = True,
) -> dict:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("train_iteration needs a non-empty mini-batch")
    enc = state.encoder
    fwd0, bwd0 = enc.counters["forward_rows"], enc.counters["backward_rows"]

    E, trace = enc_mod.forward(enc, X)
    loss_enc, grad_E = encoder_loss(E, labels, state.W, cfg)
    loss_cls, grad_W = classifier_loss(E, labels, state.queue, state.W, cfg)
    queue_len = len(state.queue)
    comp = 0.0
    if queue_len and state.queue.compensation_enabled:
        comp = float(np.mean(row_norms(compensated_embeddings(state.queue, state.W) - state.queue.embeddings)))

    grads = enc_mod.backward(enc, trace, grad_E)
    if update_encoder:
        sgd_step(enc.params(), grads, state.encoder_opt, state.iteration)
    if update_classifier:
        sgd_step({"W": state.W}, {"W": grad_W}, state.classifier_opt, state.iteration)

    if enqueue:
        enqueue_batch(state.queue, E, labels, state.W, state.iteration, X if state.queue.retain_inputs else None)
    state.iteration += 1
    return {
        "encoder_loss": loss_enc,
        "classifier_loss": loss_cls,
        "queue_length": queue_len,
        "compensation_magnitude": comp,
        "encoder_forward_rows": enc.counters["forward_rows"] - fwd0,
        "encoder_backward_rows": enc.counters["backward_rows"] - bwd0,
    }


def baseline_iteration(state: TrainState, X, labels, cfg: MarginConfig) -> dict:
    """Plain mini-batch step: one joint loss updates both encoder and classifier."""
    enc = state.encoder
    E, trace = enc_mod.forward(enc, np.asarray(X, dtype=np.float64))
    loss, grad_E, grad_W = batch_loss(E, labels, state.W, cfg)
    sgd_step(enc.params(), enc_mod.backward(enc, trace, grad_E), state.encoder_opt, state.iteration)
    sgd_step({"W": state.W}, {"W": grad_W}, state.classifier_opt, state.iteration)
    state.iteration += 1
    return {"loss": loss}
