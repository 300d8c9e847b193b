"""Cross-validation harness, labeled-ratio and lambda sweeps, and ablation variants.

Every fold masks labels inside its own training portion, trains
transductively on that portion, and scores the held-out fold through the
learned linear maps against its ground truth. All randomness is derived from
one seed, and results come back in fold order whatever ``jobs`` is.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .dataset import mask_labels, split_folds
from .errors import ParameterError, TrainingError, ValidationError
from .model import Hyperparams, predict, predict_raw, train

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-sigma", "no-gamma", "per-view-nbrs")
PREDICTION_MODES = ("projected", "clamped")


def variant_hyper(hyper, variant):
    """Hyperparameters of an ablation variant.

    ``no-sigma`` drops the similarity-consistency term, ``no-gamma`` the
    distribution-consistency term, and ``per-view-nbrs`` replaces the
    cross-view neighbor unions by each view's own neighbors.
    """
    if variant == "full":
        return hyper
    if variant == "no-sigma":
        return replace(hyper, sigma=0.0)
    if variant == "no-gamma":
        return replace(hyper, gamma=0.0)
    if variant == "per-view-nbrs":
        return replace(hyper, complement=False)
    raise ParameterError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")


def clamp_normalize(raw):
    """Negative outputs set to zero, rows rescaled to sum to one (uniform if all vanish)."""
    out = np.maximum(np.atleast_2d(raw), 0.0)
    sums = out.sum(axis=1, keepdims=True)
    empty = sums[:, 0] <= 0
    out[empty] = 1.0
    sums[empty] = out.shape[1]
    return out / sums


def mask_seed(seed, fold):
    """Label-mask seed of one fold, independent across folds."""
    return int(np.random.SeedSequence(seed, spawn_key=(fold,)).generate_state(1)[0])


@dataclass(frozen=True)
class FoldResult:
    fold: int
    report: metrics.MetricReport
    clamped: metrics.MetricReport
    iterations: int
    converged: bool
    labeled: int


@dataclass(frozen=True)
class CvResult:
    """Per-fold results plus their aggregates for both prediction modes."""

    folds: tuple
    ratio: float
    hyper: Hyperparams
    seed: int

    @property
    def aggregate(self):
        return self._aggregate("report")

    @property
    def aggregate_clamped(self):
        return self._aggregate("clamped")

    def _aggregate(self, attr):
        reports = [getattr(f, attr) for f in self.folds]
        if len(reports) == 1:
            r = reports[0]
            return metrics.AggregateReport(
                mean={m: getattr(r, m) for m in metrics.METRIC_NAMES},
                std={m: 0.0 for m in metrics.METRIC_NAMES},
                folds=1,
            )
        return metrics.aggregate_folds(reports)

    def mean(self, metric="chebyshev"):
        return self.aggregate.mean[metric]


def _require_truth(ds):
    if ds.truth is None and ds.l != ds.n:
        raise ValidationError("evaluation needs ground truth for every sample")


def run_fold(ds, plan, fold, ratio, hyper, seed):
    """Train on fold ``fold``'s training portion and score its test portion."""
    train_idx, test_idx = plan.folds[fold]
    train_ds = mask_labels(ds.subset(train_idx), ratio, mask_seed(seed, fold))
    try:
        result = train(train_ds, hyper)
    except TrainingError as exc:
        raise TrainingError(str(exc), fold=fold) from exc
    test = ds.subset(test_idx)
    truth = test.ground_truth
    raw = predict_raw(result.params, test.views)
    projected = predict(result.params, test.views)
    log.info("fold %d: %d iterations, converged=%s", fold, result.trace.iterations, result.trace.converged)
    return FoldResult(
        fold=fold,
        report=metrics.evaluate_set(truth, projected),
        clamped=metrics.evaluate_set(truth, clamp_normalize(raw)),
        iterations=result.trace.iterations,
        converged=result.trace.converged,
        labeled=train_ds.l,
    )


def _run_fold_args(args):
    return run_fold(*args)


def cross_validate(ds, hyper=None, folds=10, ratio=0.1, seed=0, jobs=1, fold_indices=None):
    """k-fold cross-validation of one hyperparameter setting.

    ``fold_indices`` restricts the run to a subset of the folds (all by
    default). ``jobs > 1`` trains folds in worker processes.
    """
    hyper = hyper or Hyperparams()
    _require_truth(ds)
    if jobs < 1:
        raise ParameterError("jobs must be at least 1")
    plan = split_folds(ds, folds, seed)
    chosen = range(len(plan)) if fold_indices is None else list(fold_indices)
    for f in chosen:
        if not 0 <= f < len(plan):
            raise ParameterError(f"fold index {f} outside 0..{len(plan) - 1}")
    tasks = [(ds, plan, f, ratio, hyper, seed) for f in chosen]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_fold_args(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_args, tasks))
    return CvResult(folds=tuple(results), ratio=ratio, hyper=hyper, seed=seed)


def sweep_ratios(ds, ratios, hyper=None, **cv):
    """One cross-validation run per labeled ratio."""
    return [(float(r), cross_validate(ds, hyper, ratio=r, **cv)) for r in ratios]


def sweep_lambda(ds, grid, hyper=None, **cv):
    """One cross-validation run per value of lambda."""
    hyper = hyper or Hyperparams()
    return [(float(lam), cross_validate(ds, replace(hyper, lam=float(lam)), **cv)) for lam in grid]


def ablate(ds, variant, hyper=None, **cv):
    return cross_validate(ds, variant_hyper(hyper or Hyperparams(), variant), **cv)
