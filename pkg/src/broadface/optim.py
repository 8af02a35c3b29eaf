"""SGD with momentum, coupled weight decay and a piecewise-constant schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def check_schedule(schedule) -> tuple[tuple[int, float], ...]:
    sched = tuple((int(t), float(lr)) for t, lr in schedule)
    if not sched:
        raise ValueError("learning-rate schedule is empty")
    thresholds = [t for t, _ in sched]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"schedule thresholds must be strictly increasing: {thresholds}")
    if any(lr <= 0 for _, lr in sched):
        raise ValueError("learning rates must be positive")
    return sched


def lr_at(schedule, iteration: int) -> float:
    """Rate of the first segment whose threshold exceeds ``iteration``; the last rate afterwards."""
    for threshold, lr in schedule:
        if iteration < threshold:
            return lr
    return schedule[-1][1]


def scaled_schedule(total_iterations: int, base_lr: float = 5e-3) -> tuple[tuple[int, float], ...]:
    """The 50k/20k/10k decay pattern, shrunk proportionally to ``total_iterations``."""
    total = max(int(total_iterations), 3)
    first = max(1, round(total * 50 / 80))
    second = max(first + 1, round(total * 70 / 80))
    return check_schedule(
        [(first, base_lr), (second, base_lr / 10), (max(second + 1, total), base_lr / 100)]
    )


@dataclass
class SgdState:
    schedule: tuple[tuple[int, float], ...]
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.schedule = check_schedule(self.schedule)
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {self.weight_decay}")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: SgdState, iteration: int):
    """In-place update ``v <- mu v + (g + wd p)``, ``p <- p - lr v``. Returns ``(params, state)``."""
    lr = lr_at(state.schedule, iteration)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        step = g + state.weight_decay * p if state.weight_decay else g
        v = state.buffers.get(name)
        if v is None:
            v = state.buffers[name] = np.zeros_like(p)
        v *= state.momentum
        v += step
        p -= lr * v
    return params, state
