"""Epoch loop shared by the estimator and the command-line runner."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc_mod
from .broadface import BroadQueue, TrainState, baseline_iteration, train_iteration
from .data import LabeledDataset
from .evaluation import measure_compensation_error, recall_at_k
from .losses import MarginConfig
from .optim import SgdState, check_schedule, scaled_schedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    layer_sizes: tuple[int, ...] = (32, 64, 16)
    margin: MarginConfig = field(default_factory=MarginConfig)
    batch_size: int = 64
    queue_capacity: int = 1024
    compensation: bool = True
    warmup_iterations: int = 0
    warmup_loss: float | None = None
    epochs: int = 20
    lr: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    classifier_lr_scale: float = 1.0
    schedule: tuple[tuple[int, float], ...] | None = None
    eval_every: int = 1
    recall_ks: tuple[int, ...] = (1, 2, 4, 8)
    seed: int = 0
    diagnostics: bool = False
    diagnostic_sample: int = 1024
    plain_trainer: bool = False

    def validate(self) -> None:
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) <= 0:
            raise ValueError(f"invalid layer_sizes {self.layer_sizes}")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.queue_capacity < 0:
            raise ValueError("queue_capacity must be non-negative")
        if self.epochs <= 0 or self.eval_every <= 0:
            raise ValueError("epochs and eval_every must be positive")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be non-negative")
        if not self.lr > 0 or not self.classifier_lr_scale > 0:
            raise ValueError("lr and classifier_lr_scale must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("need 0 <= momentum < 1 and weight_decay >= 0")
        if self.schedule is not None:
            check_schedule(self.schedule)
        if self.plain_trainer and self.queue_capacity:
            raise ValueError("the plain trainer has no queue; set queue_capacity=0")

    @property
    def label(self) -> str:
        if self.queue_capacity == 0:
            return "baseline"
        return "broadface" if self.compensation else "broadface-nocomp"


@dataclass
class FitResult:
    state: TrainState
    records: list[tuple[str, int, float, str]]
    recall_history: list[tuple[int, float]]
    compensation_records: list[tuple[int, object]]

    @property
    def encoder(self) -> enc_mod.MlpEncoder:
        return self.state.encoder

    @property
    def W(self) -> np.ndarray:
        return self.state.W


def init_state(cfg: TrainConfig, num_classes: int) -> TrainState:
    enc_seed, w_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    encoder = enc_mod.init_encoder(cfg.layer_sizes, seed=enc_seed)
    D = cfg.layer_sizes[-1]
    W = np.random.default_rng(w_seed).standard_normal((num_classes, D)) / math.sqrt(D)
    return TrainState(
        encoder=encoder,
        W=W,
        queue=BroadQueue(cfg.queue_capacity, D, cfg.compensation, retain_inputs=cfg.diagnostics),
        encoder_opt=SgdState(_schedule(cfg, 0), cfg.momentum, cfg.weight_decay),
        classifier_opt=SgdState(_schedule(cfg, 0), cfg.momentum, cfg.weight_decay),
    )


def _schedule(cfg: TrainConfig, steps_per_epoch: int):
    if cfg.schedule is not None:
        return cfg.schedule
    if not steps_per_epoch:
        return ((1, cfg.lr),)
    return scaled_schedule(cfg.epochs * steps_per_epoch, cfg.lr)


def embed(encoder: enc_mod.MlpEncoder, X) -> np.ndarray:
    E, _ = enc_mod.forward(encoder, np.asarray(X, dtype=np.float64))
    return E


def fit(train: LabeledDataset, cfg: TrainConfig, test: LabeledDataset | None = None) -> FitResult:
    """Warm up without a queue, then train with it; evaluate Recall@K on ``test`` per cadence."""
    cfg.validate()
    if train.feature_dim != cfg.layer_sizes[0]:
        raise ValueError(f"dataset has {train.feature_dim} features, encoder expects {cfg.layer_sizes[0]}")
    n = len(train)
    steps = n // cfg.batch_size
    if steps == 0:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    state = init_state(cfg, train.num_classes)
    sched = _schedule(cfg, steps)
    state.encoder_opt.schedule = sched
    state.classifier_opt.schedule = tuple((t, lr * cfg.classifier_lr_scale) for t, lr in sched)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    diag_rng = np.random.default_rng(cfg.seed + 1)

    records: list[tuple[str, int, float, str]] = []
    recall_history: list[tuple[int, float]] = []
    comp_records: list[tuple[int, object]] = []
    recent: list[float] = []
    warm = cfg.warmup_iterations > 0

    def evaluate(epoch: int) -> None:
        if test is None:
            return
        rec = recall_at_k(embed(state.encoder, test.features), test.labels, cfg.recall_ks)
        for k, v in rec.items():
            records.append((f"recall@{k}", epoch, v, cfg.label))
        recall_history.append((epoch, rec[cfg.recall_ks[0]]))

    evaluate(0)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        enc_losses, cls_losses = [], []
        for b in range(steps):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            X, y = train.features[idx], train.labels[idx]
            if cfg.plain_trainer:
                m = baseline_iteration(state, X, y, cfg.margin)
                enc_losses.append(m["loss"])
                cls_losses.append(m["loss"])
                continue
            m = train_iteration(state, X, y, cfg.margin, enqueue=not warm)
            if not np.isfinite(m["encoder_loss"]) or not np.isfinite(m["classifier_loss"]):
                raise FloatingPointError(f"non-finite loss at iteration {state.iteration}")
            enc_losses.append(m["encoder_loss"])
            cls_losses.append(m["classifier_loss"])
            if warm:
                recent = (recent + [m["encoder_loss"]])[-10:]
                done = state.iteration >= cfg.warmup_iterations
                if cfg.warmup_loss is not None and len(recent) == 10 and np.mean(recent) <= cfg.warmup_loss:
                    done = True
                if done:
                    warm = False
                    records.append(("warmup_end", state.iteration, float(np.mean(recent or [0.0])), cfg.label))
        records.append(("encoder_loss", epoch, float(np.mean(enc_losses)), cfg.label))
        records.append(("classifier_loss", epoch, float(np.mean(cls_losses)), cfg.label))
        if cfg.diagnostics and len(state.queue):
            k = min(cfg.diagnostic_sample, len(state.queue))
            sample = np.sort(diag_rng.choice(len(state.queue), size=k, replace=False))
            recs = measure_compensation_error(state.encoder, state.W, state.queue, sample, now=state.iteration)
            comp_records.append((epoch, recs))
            for r in recs:
                extra = f"age={r.iterations_elapsed};n={r.count}"
                records.append(("cos_err_raw", epoch, r.mean_error_uncompensated, extra))
                records.append(("cos_err_comp", epoch, r.mean_error_compensated, extra))
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            evaluate(epoch)
        log.debug("epoch %d loss %.4f", epoch, records[-1][2])
    return FitResult(state, records, recall_history, comp_records)
