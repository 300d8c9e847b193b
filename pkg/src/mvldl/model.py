"""Per-view linear predictors, the training objective and the alternating trainer."""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.linalg

from . import graph as graph_mod
from . import propagate, qpsolve
from .errors import ParameterError, ShapeError, TrainingError, ValidationError
from .neighbors import neighbor_sets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    """Model and solver settings.

    Regularization defaults (k=10, gamma=100, sigma=1000, mu1=0.1, mu2=10)
    are the published settings; ``lam`` is meant to be tuned over
    ``10**-3 .. 10**3``. ``complement=False`` restricts every similarity row
    to its own view's neighbors instead of the cross-view union.
    """

    lam: float = 1.0
    mu1: float = 0.1
    mu2: float = 10.0
    sigma: float = 1000.0
    gamma: float = 100.0
    k: int = 10
    tol: float = 1e-6
    max_iter: int = 100
    qp_tol: float = qpsolve.DEFAULT_TOL
    qp_max_iter: int = qpsolve.DEFAULT_MAX_ITER
    seed: int = 0
    complement: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError("lambda must be positive")
        for name in ("mu1", "mu2", "sigma", "gamma"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if self.k < 1:
            raise ParameterError("k must be at least 1")
        if not self.tol >= 0 or not self.qp_tol > 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iter < 1 or self.qp_max_iter < 1:
            raise ParameterError("iteration caps must be positive")
        if self.seed < 0:
            raise ParameterError("seed must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True, eq=False)
class ModelParams:
    per_view: tuple

    @property
    def V(self):
        return len(self.per_view)

    @property
    def q(self):
        return self.per_view[0].shape[1]

    @property
    def dims(self):
        return [Wv.shape[0] for Wv in self.per_view]

    @property
    def W(self):
        """All views stacked into one ``(sum(dims), q)`` matrix."""
        return np.vstack(self.per_view)


@dataclass
class TrainTrace:
    """Objective value after every sub-step of training.

    ``steps`` holds ``(iteration, step_name, objective)``; iteration 0 is
    the initialized state with zero weights.
    """

    steps: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def objectives(self):
        return np.array([s[2] for s in self.steps])

    @property
    def deltas(self):
        return np.diff(self.objectives)

    def max_relative_increase(self):
        f = self.objectives
        if f.size < 2:
            return 0.0
        return float(np.max((f[1:] - f[:-1]) / np.maximum(np.abs(f[:-1]), 1e-300)))


def update_weights(ds, D, lam):
    """Ridge solution per view: ``W_v = (lam X_v'X_v + I)^-1 lam X_v' D_v``."""
    Dm = D.D if isinstance(D, propagate.DistributionMatrix) else np.asarray(D, dtype=float)
    if Dm.shape[0] != ds.n * ds.V:
        raise ShapeError(f"D has {Dm.shape[0]} rows, expected {ds.n * ds.V}")
    per_view = []
    for v, X in enumerate(ds.views):
        if not np.all(np.isfinite(X)):
            raise ValidationError(f"view {v} has non-finite features")
        A = lam * (X.T @ X) + np.eye(X.shape[1])
        B = lam * (X.T @ Dm[v * ds.n:(v + 1) * ds.n])
        per_view.append(scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), B))
    return ModelParams(per_view=tuple(per_view))


def weight_objective(ds, D, params, lam):
    """``lam * sum ||W_v' x - d||^2 + sum ||W_v||_F^2`` (the W-dependent part)."""
    Dm = D.D if isinstance(D, propagate.DistributionMatrix) else np.asarray(D)
    total = 0.0
    for v, (X, Wv) in enumerate(zip(ds.views, params.per_view)):
        total += lam * np.sum((X @ Wv - Dm[v * ds.n:(v + 1) * ds.n]) ** 2) + np.sum(Wv ** 2)
    return float(total)


def zero_params(ds):
    return ModelParams(per_view=tuple(np.zeros((d, ds.q)) for d in ds.dims))


def objective(ds, S, D, W, hyper):
    """Full training objective, evaluated term by term.

    Returns a dict with the unweighted terms ``fit``, ``reg``, ``feature``,
    ``distribution``, ``similarity_consistency`` and
    ``distribution_consistency`` plus the weighted ``total``. Pairwise
    consistency terms run over ordered view pairs. Every term is summed
    directly from its definition, never through the graph Laplacians, so it
    can serve as a check on them.
    """
    Dm = D.D if isinstance(D, propagate.DistributionMatrix) else np.asarray(D)
    n, V = ds.n, ds.V
    if Dm.shape != (n * V, ds.q):
        raise ValidationError(f"D has shape {Dm.shape}, expected {(n * V, ds.q)}")
    if W.V != V or W.dims != ds.dims:
        raise ValidationError("weights do not match the dataset views")
    if S.n != n or S.V != V:
        raise ValidationError("similarity graph does not match the dataset")

    fit = 0.0
    reg = 0.0
    for v in range(V):
        resid = ds.views[v] @ W.per_view[v] - Dm[v * n:(v + 1) * n]
        fit += np.sum(resid ** 2)
        reg += np.sum(W.per_view[v] ** 2)

    Smat = graph_mod.assemble(S)
    feature = 0.0
    for v, X in enumerate(ds.views):
        block = Smat[v * n:(v + 1) * n, v * n:(v + 1) * n]
        feature += np.sum((X - block @ X) ** 2)
    dist = np.sum((Dm - Smat @ Dm) ** 2)

    sim_c = 0.0
    for i in range(n):
        s = S.weights[i]
        diff2 = (s[:, None, :] - s[None, :, :]) ** 2
        sim_c += np.sum(S.support_mask(i)[:, None, :] * diff2)
    dist_c = 0.0
    for v in range(V):
        for u in range(V):
            if u != v:
                dist_c += np.sum((Dm[v * n:(v + 1) * n] - Dm[u * n:(u + 1) * n]) ** 2)

    terms = {
        "fit": float(fit),
        "reg": float(reg),
        "feature": float(feature),
        "distribution": float(dist),
        "similarity_consistency": float(sim_c),
        "distribution_consistency": float(dist_c),
    }
    terms["total"] = (
        hyper.lam * terms["fit"] + terms["reg"] + hyper.mu1 * terms["feature"]
        + hyper.mu2 * terms["distribution"] + hyper.sigma * terms["similarity_consistency"]
        + hyper.gamma * terms["distribution_consistency"]
    )
    return terms


@dataclass
class TrainResult:
    params: ModelParams
    graph: graph_mod.SimilarityGraph
    distributions: propagate.DistributionMatrix
    trace: TrainTrace

    def __iter__(self):
        return iter((self.params, self.graph, self.distributions, self.trace))


def train(ds, hyper=None):
    """Alternating minimization over W, S and D.

    kNN and the initial S and D are computed once; each sweep then updates
    W in closed form, every similarity row, and D, until the relative
    objective decrease over a sweep drops below ``hyper.tol`` or
    ``hyper.max_iter`` sweeps have run.
    """
    hyper = hyper or Hyperparams()
    if ds.l == 0:
        raise TrainingError("no labeled samples")
    if hyper.k >= ds.n:
        raise ParameterError(f"k ({hyper.k}) must be smaller than the sample count ({ds.n})")
    qp = dict(tol=hyper.qp_tol, max_iter=hyper.qp_max_iter)

    nbrs = neighbor_sets(ds, hyper.k)
    S = graph_mod.init_similarity(ds, nbrs, complemented=hyper.complement, **qp)
    D = propagate.init_distributions(S, ds, **qp)
    W = zero_params(ds)
    grams = [graph_mod.feature_gram(ds, nbrs, i) for i in range(ds.n)]

    trace = TrainTrace()
    f = objective(ds, S, D, W, hyper)["total"]
    trace.steps.append((0, "init", f))
    trace.seconds.append(0.0)
    for it in range(1, hyper.max_iter + 1):
        f_start = f
        try:
            t0 = time.perf_counter()
            W = update_weights(ds, D, hyper.lam)
            t1 = time.perf_counter()
            trace.steps.append((it, "W", objective(ds, S, D, W, hyper)["total"]))
            S = graph_mod.update_similarity(ds, S, D.D, hyper, feature_grams=grams, **qp)
            t2 = time.perf_counter()
            trace.steps.append((it, "S", objective(ds, S, D, W, hyper)["total"]))
            lap = propagate.build_laplacians(graph_mod.assemble(S), ds.n, ds.V)
            D = propagate.update_distributions(lap, W, ds, hyper, current=D, **qp)
            t3 = time.perf_counter()
        except TrainingError as exc:
            raise TrainingError(str(exc), iteration=it) from exc
        f = objective(ds, S, D, W, hyper)["total"]
        trace.steps.append((it, "D", f))
        trace.seconds.extend([t1 - t0, t2 - t1, t3 - t2])
        trace.iterations = it
        rel = (f_start - f) / max(abs(f_start), 1e-300)
        log.debug("iteration %d objective %.10g relative decrease %.3g", it, f, rel)
        if rel < hyper.tol:
            trace.converged = True
            break
    return TrainResult(W, S, D, trace)


def predict_raw(params, views):
    """Average of the per-view linear outputs, before simplex projection."""
    views = [np.asarray(x, dtype=float) for x in views]
    if len(views) != params.V:
        raise ValidationError(f"expected {params.V} views, got {len(views)}")
    single = views[0].ndim == 1
    views = [np.atleast_2d(x) for x in views]
    for v, (x, Wv) in enumerate(zip(views, params.per_view)):
        if x.shape[1] != Wv.shape[0]:
            raise ValidationError(f"view {v} has dimension {x.shape[1]}, model expects {Wv.shape[0]}")
        if x.shape[0] != views[0].shape[0]:
            raise ShapeError("views disagree on the number of samples")
    out = sum(x @ Wv for x, Wv in zip(views, params.per_view)) / params.V
    return out[0] if single else out


def predict(params, views):
    """Label distribution(s) for one sample or a batch.

    ``views`` holds one feature vector (or matrix of row vectors) per view.
    The view-averaged linear output is projected onto the probability simplex.
    """
    raw = np.atleast_2d(predict_raw(params, views))
    out = qpsolve._project_rows(raw, np.ones(raw.shape[0]))
    return out[0] if np.asarray(views[0]).ndim == 1 else out


def save_model(params, hyper, path):
    doc = {
        "q": params.q,
        "V": params.V,
        "dims": params.dims,
        "hyperparams": hyper.to_dict(),
        "W": [Wv.tolist() for Wv in params.per_view],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    per_view = tuple(np.array(Wv, dtype=float).reshape(d, doc["q"]) for Wv, d in zip(doc["W"], doc["dims"]))
    if len(per_view) != doc["V"]:
        raise ValidationError("model file lists a wrong number of views")
    return ModelParams(per_view=per_view), Hyperparams.from_dict(doc["hyperparams"])
