"""Synthetic many-class datasets, the ``bfds`` CSV format and pair sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (n, feature_dim)
    labels: np.ndarray  # (n,) int
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DatasetError(f"features must be a non-empty (n, d) array, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise DatasetError(f"{X.shape[0]} samples but {y.shape} labels")
        if not np.all(np.isfinite(X)):
            row = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise DatasetError(f"row {row} has non-finite features")
        if y.min() < 0 or y.max() >= self.num_classes:
            row = int(np.flatnonzero((y < 0) | (y >= self.num_classes))[0])
            raise DatasetError(f"row {row}: label {y[row]} outside [0, {self.num_classes})")
        missing = np.setdiff1d(np.arange(self.num_classes), y)
        if missing.size:
            raise DatasetError(f"class {int(missing[0])} has no samples")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 512
    samples_per_class: int = 32
    feature_dim: int = 32
    intra_class_noise: float = 1.0
    inter_class_separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "samples_per_class", "feature_dim"):
            if int(getattr(self, name)) <= 0:
                raise DatasetError(f"{name} must be positive")
        if self.intra_class_noise < 0:
            raise DatasetError("intra_class_noise must be non-negative")
        if self.inter_class_separation <= 0:
            raise DatasetError("inter_class_separation must be positive")


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Gaussian clusters whose centers lie on a sphere of radius ``inter_class_separation``."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.num_classes, spec.feature_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.inter_class_separation
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.standard_normal((labels.size, spec.feature_dim)) * spec.intra_class_noise
    return LabeledDataset(centers[labels] + noise, labels, spec.num_classes)


def train_test_split(ds: LabeledDataset, test_fraction: float, seed: int):
    """Per-class split, so both halves keep every class (each class needs >= 2 samples)."""
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if idx.size < 2:
            raise DatasetError(f"class {c} has a single sample; cannot split")
        k = min(idx.size - 1, max(1, round(idx.size * test_fraction)))
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    tr, te = np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))
    return (
        LabeledDataset(ds.features[tr], ds.labels[tr], ds.num_classes),
        LabeledDataset(ds.features[te], ds.labels[te], ds.num_classes),
    )


def save_dataset(ds: LabeledDataset, path) -> None:
    lines = [f"bfds,{len(ds)},{ds.feature_dim},{ds.num_classes}"]
    for label, row in zip(ds.labels, ds.features):
        lines.append(",".join([str(int(label))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_dataset(path) -> LabeledDataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 4 or header[0] != "bfds":
        raise DatasetError(f"{path}:1: expected header 'bfds,<count>,<dim>,<classes>'")
    try:
        count, dim, classes = (int(h) for h in header[1:])
    except ValueError as exc:
        raise DatasetError(f"{path}:1: bad header field ({exc})") from None
    if len(lines) - 1 != count:
        raise DatasetError(f"{path}: header declares {count} rows, found {len(lines) - 1}")

    X = np.empty((count, dim))
    y = np.empty(count, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise DatasetError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(fields)}")
        try:
            y[i] = int(fields[0])
            X[i] = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= y[i] < classes:
            raise DatasetError(f"{path}:{lineno}: row {i} label {y[i]} >= declared classes {classes}")
        if not np.all(np.isfinite(X[i])):
            raise DatasetError(f"{path}:{lineno}: row {i} has non-finite features")
    return LabeledDataset(X, y, classes)


def split_pairs(ds: LabeledDataset, num_genuine: int, num_impostor: int, seed: int):
    """Sample distinct index pairs ``(i, j, same)`` with ``i < j``.

    Genuine pairs come first, then impostor pairs; order is fixed by ``seed``.
    """
    labels = ds.labels
    n = labels.size
    if num_genuine < 0 or num_impostor < 0:
        raise DatasetError("pair counts must be non-negative")
    if num_impostor and ds.num_classes < 2:
        raise DatasetError("impostor pairs need at least two classes")

    counts = np.bincount(labels, minlength=ds.num_classes)
    total_genuine = int((counts * (counts - 1) // 2).sum())
    total_pairs = n * (n - 1) // 2
    if num_genuine > total_genuine:
        raise DatasetError(f"requested {num_genuine} genuine pairs, only {total_genuine} exist")
    if num_impostor > total_pairs - total_genuine:
        raise DatasetError(f"requested {num_impostor} impostor pairs, only {total_pairs - total_genuine} exist")

    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(labels == c) for c in range(ds.num_classes)]
    eligible = np.array([c for c in range(ds.num_classes) if counts[c] >= 2])

    def draw(want: int, same: bool) -> list[tuple[int, int, bool]]:
        seen: set[tuple[int, int]] = set()
        out = []
        # Rejection sampling; fall back to enumeration when the pool is nearly exhausted.
        budget = 50 * want + 100
        while len(out) < want and budget:
            budget -= 1
            if same:
                c = eligible[rng.integers(eligible.size)]
                i, j = rng.choice(by_class[c], size=2, replace=False)
            else:
                i, j = rng.integers(n, size=2)
                if labels[i] == labels[j]:
                    continue
            key = (int(min(i, j)), int(max(i, j)))
            if key not in seen:
                seen.add(key)
                out.append((*key, same))
        if len(out) < want:
            pool = [
                (i, j) for i in range(n) for j in range(i + 1, n)
                if (labels[i] == labels[j]) == same and (i, j) not in seen
            ]
            for k in rng.permutation(len(pool))[: want - len(out)]:
                out.append((*pool[k], same))
        return out

    return draw(num_genuine, True) + draw(num_impostor, False)
