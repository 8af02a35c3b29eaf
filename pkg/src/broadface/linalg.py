"""Dense float64 vector and matrix helpers.

Thin, checked wrappers around numpy. Matrices are row-major ``(rows, cols)``
arrays so a classifier row ``W[y]`` is a contiguous slice.
"""

from __future__ import annotations

import numpy as np

NORM_EPSILON = 1e-12


class DimensionMismatch(ValueError):
    pass


class NearZeroNorm(ValueError):
    """Raised when a vector is too short to be normalized."""


def as_vector(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def dot(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dot of dims {a.size} and {b.size}")
    return float(a @ b)


def l2_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(a @ a))


def l2_normalize(a, eps: float = NORM_EPSILON) -> np.ndarray:
    a = as_vector(a)
    n = l2_norm(a)
    if n <= eps:
        raise NearZeroNorm(f"cannot normalize vector with norm {n:g}")
    return a / n


def matvec(m, v) -> np.ndarray:
    m, v = as_matrix(m), as_vector(v)
    if m.shape[1] != v.size:
        raise DimensionMismatch(f"matvec of {m.shape} with dim {v.size}")
    return m @ v


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def normalize_rows(m: np.ndarray, eps: float = NORM_EPSILON, what: str = "row"):
    """Return ``(unit_rows, norms)``; raises NearZeroNorm naming the first bad row."""
    norms = row_norms(m)
    bad = np.flatnonzero(norms <= eps)
    if bad.size:
        raise NearZeroNorm(f"{what} {int(bad[0])} has norm {norms[bad[0]]:g}")
    return m / norms[:, None], norms


def project_out(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Backprop a gradient through row-wise normalization ``u = v / |v|``."""
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - radial[:, None] * unit) / norms[:, None]
