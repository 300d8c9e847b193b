"""The six label-distribution evaluation measures and their aggregation.

Distances (lower is better): Chebyshev, Clark, Canberra, Kullback-Leibler.
Similarities (higher is better): cosine, intersection.

The truth ``p`` is always the first argument and the prediction ``q`` the
second, so ``kl`` is KL(p || q). Zero conventions: Clark and Canberra terms
with ``p_i + q_i = 0`` contribute nothing, KL terms with ``p_i = 0``
contribute nothing, and ``q_i`` is clamped below at 1e-12 inside the log.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError

METRIC_NAMES = ("chebyshev", "clark", "canberra", "kl", "cosine", "intersection")
LOWER_IS_BETTER = {"chebyshev": True, "clark": True, "canberra": True, "kl": True,
                   "cosine": False, "intersection": False}
KL_FLOOR = 1e-12
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class MetricReport:
    chebyshev: float
    clark: float
    canberra: float
    kl: float
    cosine: float
    intersection: float
    count: int = 1

    def values(self):
        return np.array([getattr(self, m) for m in METRIC_NAMES])

    def to_dict(self):
        d = {m: float(getattr(self, m)) for m in METRIC_NAMES}
        d["count"] = int(self.count)
        return d


@dataclass(frozen=True)
class AggregateReport:
    """Per-metric mean and sample standard deviation over folds."""

    mean: dict
    std: dict
    folds: int

    def to_dict(self):
        return {
            "metrics": {m: {"mean": float(self.mean[m]), "std": float(self.std[m])} for m in METRIC_NAMES},
            "folds": int(self.folds),
        }


def _as_simplex_rows(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")
    if a.size and a.min() < -SIMPLEX_TOL:
        raise ValidationError(f"{name} has a negative entry {a.min():.3g}")
    bad = np.abs(a.sum(axis=1) - 1.0) > SIMPLEX_TOL
    if np.any(bad):
        raise ValidationError(f"{name} row {int(np.argmax(bad))} does not sum to one")
    return a


def _per_pair(P, Q):
    """All six measures for every row pair; returns a ``(rows, 6)`` array."""
    diff = np.abs(P - Q)
    tot = P + Q
    nz = tot > 0
    safe = np.where(nz, tot, 1.0)
    clark = np.sqrt(np.sum(np.where(nz, diff / safe, 0.0) ** 2, axis=1))
    canberra = np.sum(np.where(nz, diff / safe, 0.0), axis=1)
    pos = P > 0
    ratio = np.where(pos, P, 1.0) / np.maximum(Q, KL_FLOOR)
    # the floor can push a sum of vanishing terms a hair below zero
    kl = np.maximum(np.sum(np.where(pos, P * np.log(ratio), 0.0), axis=1), 0.0)
    norms = np.linalg.norm(P, axis=1) * np.linalg.norm(Q, axis=1)
    cosine = np.sum(P * Q, axis=1) / np.where(norms > 0, norms, 1.0)
    return np.column_stack([
        diff.max(axis=1),
        clark,
        canberra,
        kl,
        cosine,
        np.minimum(P, Q).sum(axis=1),
    ])


def evaluate_pair(p, q):
    """Measures between one true distribution ``p`` and one prediction ``q``.

    >>> r = evaluate_pair([0.5, 0.5], [0.25, 0.75])
    >>> round(r.chebyshev, 6), round(r.intersection, 6)
    (0.25, 0.75)
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 1 or p.shape != q.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {q.shape}")
    row = _per_pair(_as_simplex_rows(p, "truth"), _as_simplex_rows(q, "prediction"))[0]
    return MetricReport(*row.tolist(), count=1)


def evaluate_set(truths, predictions):
    """Per-sample measures averaged over a test set."""
    P = np.asarray(truths, dtype=float)
    Q = np.asarray(predictions, dtype=float)
    if P.size == 0 or Q.size == 0:
        raise ParameterError("empty evaluation set")
    if P.ndim != 2 or P.shape != Q.shape:
        raise ValidationError(f"shape mismatch: {P.shape} vs {Q.shape}")
    rows = _per_pair(_as_simplex_rows(P, "truth"), _as_simplex_rows(Q, "prediction"))
    return MetricReport(*rows.mean(axis=0).tolist(), count=P.shape[0])


def aggregate_folds(reports):
    """Mean and sample (n - 1) standard deviation of each measure across folds."""
    reports = list(reports)
    if len(reports) < 2:
        raise ParameterError("aggregation needs at least two reports")
    table = np.array([r.values() for r in reports])
    # constant columns are reported exactly rather than with rounding residue
    const = np.ptp(table, axis=0) == 0
    mean = np.where(const, table[0], table.mean(axis=0))
    std = np.where(const, 0.0, table.std(axis=0, ddof=1))
    return AggregateReport(
        mean=dict(zip(METRIC_NAMES, mean.tolist())),
        std=dict(zip(METRIC_NAMES, std.tolist())),
        folds=len(reports),
    )
