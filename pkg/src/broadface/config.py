"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .losses import MarginConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _schedule(text: str):
    if not text.strip():
        return None
    out = []
    for part in text.split(","):
        t, lr = part.split(":")
        out.append((int(t), float(lr)))
    return tuple(out)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"
    num_classes: int = 512
    samples_per_class: int = 32
    feature_dim: int = 32
    intra_class_noise: float = 0.5
    inter_class_separation: float = 4.0
    data_seed: int = 0
    test_fraction: float = 0.25
    # model and loss
    layer_sizes: tuple[int, ...] = (32, 64, 16)
    margin: str = "arcface"
    margin_value: float = 0.5
    scale: float = 64.0
    # training
    batch_size: int = 64
    queue_capacity: int = 1024
    compensation: bool = True
    warmup_iterations: int = 0
    warmup_loss: float | None = None
    epochs: int = 20
    lr: float = 5e-3
    classifier_lr_scale: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: tuple[tuple[int, float], ...] | None = None
    eval_every: int = 1
    recall_ks: tuple[int, ...] = (1, 2, 4, 8)
    diagnostics: bool = False
    diagnostic_sample: int = 1024
    # evaluation
    far_targets: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    num_genuine: int = 2000
    num_impostor: int = 20000
    sweep_capacities: tuple[int, ...] = (0, 256, 1024, 4096)
    sweep_without_compensation: bool = True
    # run
    seed: int = 0
    output_dir: str = "runs/default"
    extra: dict = field(default_factory=dict, repr=False)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            layer_sizes=self.layer_sizes,
            margin=MarginConfig(self.margin, self.margin_value, self.scale),
            batch_size=self.batch_size,
            queue_capacity=self.queue_capacity,
            compensation=self.compensation,
            warmup_iterations=self.warmup_iterations,
            warmup_loss=self.warmup_loss,
            epochs=self.epochs,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            classifier_lr_scale=self.classifier_lr_scale,
            schedule=self.schedule,
            eval_every=self.eval_every,
            recall_ks=self.recall_ks,
            seed=self.seed,
            diagnostics=self.diagnostics,
            diagnostic_sample=self.diagnostic_sample,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            self.num_classes,
            self.samples_per_class,
            self.feature_dim,
            self.intra_class_noise,
            self.inter_class_separation,
            self.data_seed,
        )

    def validate(self) -> "ExperimentConfig":
        """Check every downstream precondition before any work starts."""
        try:
            self.train_config().validate()
            if self.dataset == "synthetic":
                self.synthetic_spec()
                if self.feature_dim != self.layer_sizes[0]:
                    raise ValueError(f"feature_dim {self.feature_dim} != encoder input {self.layer_sizes[0]}")
            if not 0 < self.test_fraction < 1:
                raise ValueError("test_fraction must be in (0, 1)")
            if any(not 0 <= f <= 1 for f in self.far_targets):
                raise ValueError("far_targets must lie in [0, 1]")
            if len(set(self.sweep_capacities)) != len(self.sweep_capacities):
                raise ValueError(f"duplicate sweep capacities {self.sweep_capacities}")
            if any(c < 0 for c in self.sweep_capacities):
                raise ValueError("sweep capacities must be non-negative")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def canonical(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name in ("extra", "output_dir"):
                continue
            lines.append(f"{f.name}={_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]


_PARSERS = {
    "layer_sizes": _ints,
    "recall_ks": _ints,
    "sweep_capacities": _ints,
    "far_targets": _floats,
    "schedule": _schedule,
    "warmup_loss": _opt_float,
}


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{t}:{lr!r}" for t, lr in value)
        return ",".join(_render(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    defaults = {name: getattr(cfg, name) for name in fields}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields or key == "extra":
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            if key in _PARSERS:
                parsed = _PARSERS[key](value)
            elif isinstance(defaults[key], bool):
                parsed = _bool(value)
            elif isinstance(defaults[key], int):
                parsed = int(value)
            elif isinstance(defaults[key], float):
                parsed = float(value)
            else:
                parsed = value
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        setattr(cfg, key, parsed)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
