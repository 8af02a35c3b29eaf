"""Verification, identification and retrieval metrics, plus drift diagnostics.

All similarities are cosines. Ties in nearest-neighbour ranking are broken by
the lower gallery index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc_mod
from .broadface import BroadQueue, compensated_embeddings
from .linalg import normalize_rows


@dataclass
class VerificationReport:
    far_targets: list[float]
    tar_at_far: list[float]
    thresholds: list[float]


@dataclass
class CompensationErrorRecord:
    iterations_elapsed: int
    mean_error_uncompensated: float
    mean_error_compensated: float
    count: int = 0


def tar_at_far(genuine_scores, impostor_scores, far_target: float) -> tuple[float, float]:
    """Smallest candidate threshold whose false-accept rate is <= ``far_target``.

    Candidates are the observed scores plus one value just above the maximum,
    so a zero FAR is always achievable.
    """
    gen = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    imp = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise ValueError("tar_at_far needs non-empty genuine and impostor scores")
    candidates = np.unique(np.concatenate([gen, imp]))
    candidates = np.append(candidates, np.nextafter(candidates[-1], np.inf))
    # fraction of impostors >= t is non-increasing in t
    far = (imp.size - np.searchsorted(imp, candidates, side="left")) / imp.size
    ok = np.flatnonzero(far <= far_target)
    threshold = float(candidates[ok[0]])
    tar = (gen.size - np.searchsorted(gen, threshold, side="left")) / gen.size
    return float(tar), threshold


def verification_report(E, labels, pairs, far_targets) -> VerificationReport:
    U, _ = normalize_rows(np.asarray(E, dtype=np.float64), what="embedding")
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    same = np.array([p[2] for p in pairs], dtype=bool)
    scores = np.einsum("ij,ij->i", U[i], U[j])
    rows = [tar_at_far(scores[same], scores[~same], f) for f in far_targets]
    return VerificationReport(list(far_targets), [r[0] for r in rows], [r[1] for r in rows])


def rank1_identification(probe_E, probe_labels, gallery_E, gallery_labels) -> float:
    probe_E = np.asarray(probe_E, dtype=np.float64)
    gallery_E = np.asarray(gallery_E, dtype=np.float64)
    if probe_E.shape[0] == 0 or gallery_E.shape[0] == 0:
        raise ValueError("rank-1 identification needs non-empty probe and gallery sets")
    P, _ = normalize_rows(probe_E, what="probe")
    G, _ = normalize_rows(gallery_E, what="gallery")
    nearest = np.argmax(P @ G.T, axis=1)
    return float(np.mean(np.asarray(gallery_labels)[nearest] == np.asarray(probe_labels)))


def recall_at_k(E, labels, k_values, chunk: int = 1024) -> dict[int, float]:
    """Leave-one-out Recall@K over a single embedding set.

    A query succeeds at ``k`` when its best same-class neighbour ranks within
    the top ``k``; rank counts strictly closer items plus equally close items
    with a lower index.
    """
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    ks = [int(k) for k in k_values]
    if not ks or min(ks) < 1:
        raise ValueError(f"k values must be >= 1, got {list(k_values)}")
    n = labels.size
    counts = np.unique(labels, return_counts=True)[1]
    if n < 2 or counts.min() < 2:
        raise ValueError("every query label needs at least one other instance")
    U, _ = normalize_rows(E, what="embedding")
    idx = np.arange(n)

    ranks = np.empty(n, dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        S = U[start:stop] @ U.T
        rows = np.arange(stop - start)
        S[rows, idx[start:stop]] = -np.inf
        same = labels[start:stop, None] == labels[None, :]
        same[rows, idx[start:stop]] = False
        best = np.where(same, S, -np.inf).max(axis=1)
        at_best = S == best[:, None]
        first_same = np.argmax(at_best & same, axis=1)
        greater = (S > best[:, None]).sum(axis=1)
        tied_before = (at_best & ~same & (idx[None, :] < first_same[:, None])).sum(axis=1)
        ranks[start:stop] = greater + tied_before
    return {k: float(np.mean(ranks < k)) for k in ks}


def measure_compensation_error(enc, W, q: BroadQueue, sample=None, now: int | None = None) -> list[CompensationErrorRecord]:
    """Re-encode queued inputs and compare against stored and compensated embeddings.

    ``sample`` is an index array into the queue (default: every entry).
    Errors are ``1 - cos``; records are grouped by iterations elapsed since
    enqueue, relative to ``now`` (default: the newest entry's iteration).
    """
    if len(q) == 0:
        return []
    if q.inputs is None:
        raise ValueError("queue does not retain raw inputs; enable diagnostics")
    sample = np.arange(len(q)) if sample is None else np.asarray(sample, dtype=np.int64)
    now = int(q.iterations.max()) if now is None else int(now)

    current, _ = enc_mod.forward(enc, q.inputs[sample])
    current, _ = normalize_rows(current, what="current embedding")
    past, _ = normalize_rows(q.embeddings[sample], what="queued embedding")
    comp = compensated_embeddings(q, W, enabled=True)[sample]
    comp, _ = normalize_rows(comp, what="compensated embedding")
    err_raw = 1.0 - np.einsum("ij,ij->i", current, past)
    err_comp = 1.0 - np.einsum("ij,ij->i", current, comp)
    ages = now - q.iterations[sample]

    out = []
    for age in np.unique(ages):
        m = ages == age
        out.append(CompensationErrorRecord(
            int(age), float(max(err_raw[m].mean(), 0.0)), float(max(err_comp[m].mean(), 0.0)), int(m.sum())
        ))
    return out

