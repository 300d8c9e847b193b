"""Multi-view datasets: container, on-disk format, synthetic generator, splits.

Directory layout::

    views/view_0.csv ... views/view_{V-1}.csv   n rows each, no header
    labels.csv                                  n rows x q columns
    labeled_mask.txt                            optional, one 0-based index per line

Unlabeled rows of ``labels.csv`` may be all zero. Without a mask file every
row that sums to 1 (within 1e-6) is treated as labeled. With a mask file and
a distribution in every row, the rows outside the mask are kept as shadow
ground truth for evaluation; training never reads them.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import LoadError, ParameterError, ShapeError, ValidationError

SIMPLEX_TOL = 1e-6


def check_distribution(p, tol=1e-9):
    """Return True when ``p`` lies on the probability simplex."""
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0) and np.all(p <= 1 + tol) and abs(p.sum() - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    """``n`` samples seen through ``V`` views, some with a label distribution.

    ``labels`` is an ``(n, q)`` array whose rows at ``labeled`` hold ground
    truth; other rows are zero and never read by training. ``truth`` is an
    optional shadow copy of the full ground truth used for evaluation only.
    """

    views: tuple
    labels: np.ndarray
    labeled: np.ndarray
    truth: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        views = tuple(np.asarray(X, dtype=float) for X in self.views)
        if len(views) < 1:
            raise ValidationError("a dataset needs at least one view")
        for v, X in enumerate(views):
            if X.ndim != 2:
                raise ShapeError(f"view {v} must be a 2-D matrix, got ndim={X.ndim}")
            if not np.all(np.isfinite(X)):
                raise ValidationError(f"view {v} contains non-finite values")
        n = views[0].shape[0]
        for v, X in enumerate(views):
            if X.shape[0] != n:
                raise ShapeError(f"view {v} has {X.shape[0]} rows, view 0 has {n}")
        labels = np.asarray(self.labels, dtype=float)
        if labels.ndim != 2 or labels.shape[0] != n:
            raise ShapeError(f"labels must have {n} rows, got shape {labels.shape}")
        labeled = np.unique(np.asarray(self.labeled, dtype=np.intp))
        if labeled.size and (labeled[0] < 0 or labeled[-1] >= n):
            raise ValidationError("labeled index out of range")
        for i in labeled:
            if not check_distribution(labels[i], SIMPLEX_TOL):
                raise ValidationError(f"labeled sample {i} does not carry a valid label distribution")
        truth = self.truth
        if truth is not None:
            truth = np.asarray(truth, dtype=float)
            if truth.shape != labels.shape:
                raise ShapeError("truth must match labels in shape")
        for X in views:
            X.setflags(write=False)
        labels.setflags(write=False)
        labeled.setflags(write=False)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "labeled", labeled)
        object.__setattr__(self, "truth", truth)

    @property
    def n(self):
        return self.views[0].shape[0]

    @property
    def V(self):
        return len(self.views)

    @property
    def q(self):
        return self.labels.shape[1]

    @property
    def l(self):
        return int(self.labeled.size)

    @property
    def u(self):
        return self.n - self.l

    @property
    def dims(self):
        return [X.shape[1] for X in self.views]

    @property
    def unlabeled(self):
        mask = np.ones(self.n, dtype=bool)
        mask[self.labeled] = False
        return np.flatnonzero(mask)

    @property
    def ground_truth(self):
        """Full ground truth for evaluation (falls back to ``labels``)."""
        return self.labels if self.truth is None else self.truth

    def subset(self, indices):
        """Rows ``indices`` as a new dataset; labeled status is carried over."""
        indices = np.asarray(indices, dtype=np.intp)
        is_labeled = np.zeros(self.n, dtype=bool)
        is_labeled[self.labeled] = True
        return MultiViewDataset(
            views=tuple(X[indices] for X in self.views),
            labels=self.labels[indices],
            labeled=np.flatnonzero(is_labeled[indices]),
            truth=None if self.truth is None else self.truth[indices],
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic generator.

    ``complementary`` restricts every view to its own slice of the latent
    coordinates, so that no single view resolves all clusters and neighbor
    sets from different views carry different information.
    """

    n: int = 100
    V: int = 3
    q: int = 4
    dims: Optional[Sequence[int]] = None
    clusters: Optional[int] = None
    noise: float = 0.1
    temperature: float = 0.05
    seed: int = 0
    latent_dim: int = 6
    complementary: bool = False

    def resolved_dims(self):
        return list(self.dims) if self.dims is not None else [10] * self.V

    def resolved_clusters(self):
        return self.clusters if self.clusters is not None else 2 * self.q

    def validate(self):
        if self.V < 1:
            raise ParameterError("V must be at least 1")
        if self.q < 2:
            raise ParameterError("q must be at least 2")
        if self.n < 2 * self.q:
            raise ParameterError(f"n must be at least 2q = {2 * self.q}")
        dims = self.resolved_dims()
        if len(dims) != self.V or any(int(d) < 1 for d in dims):
            raise ParameterError("dims must list V positive dimensions")
        if self.resolved_clusters() < self.q:
            raise ParameterError("clusters must be at least q")
        if self.noise < 0:
            raise ParameterError("noise must be nonnegative")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")
        if self.latent_dim < 1:
            raise ParameterError("latent_dim must be positive")
        if self.complementary and self.latent_dim < self.V:
            raise ParameterError("complementary views need latent_dim >= V")
        if self.seed < 0:
            raise ParameterError("seed must be nonnegative")


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _view_latent_slices(spec):
    if not spec.complementary:
        return [np.arange(spec.latent_dim)] * spec.V
    return np.array_split(np.arange(spec.latent_dim), spec.V)


def generate_synthetic(spec):
    """Draw a fully labeled synthetic multi-view dataset.

    Latent points come from a mixture of isotropic Gaussians; the first ``q``
    cluster centers double as label anchors and a sample's distribution is
    ``softmax(-temperature * ||z - anchor_j||^2)``. View ``v`` is a fixed
    random linear map of (a slice of) the latent point plus Gaussian noise.
    Every view draws from its own child seed, so views are reproducible
    independently of one another.
    """
    spec.validate()
    dims = [int(d) for d in spec.resolved_dims()]
    n_clusters = spec.resolved_clusters()
    root = np.random.SeedSequence(spec.seed)
    latent_seq, *view_seqs = root.spawn(1 + spec.V)

    rng = np.random.default_rng(latent_seq)
    centers = rng.normal(scale=2.0, size=(n_clusters, spec.latent_dim))
    assign = np.concatenate([np.arange(n_clusters), rng.integers(0, n_clusters, spec.n - n_clusters)]) \
        if spec.n >= n_clusters else rng.integers(0, n_clusters, spec.n)
    rng.shuffle(assign)
    Z = centers[assign] + rng.normal(scale=0.5, size=(spec.n, spec.latent_dim))
    anchors = centers[: spec.q]
    sq = ((Z[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
    labels = _softmax_rows(-spec.temperature * sq)
    labels /= labels.sum(axis=1, keepdims=True)

    views = []
    for v, (seq, sl) in enumerate(zip(view_seqs, _view_latent_slices(spec))):
        vrng = np.random.default_rng(seq)
        P = vrng.normal(size=(sl.size, dims[v])) / np.sqrt(sl.size)
        X = Z[:, sl] @ P + vrng.normal(scale=spec.noise, size=(spec.n, dims[v]))
        views.append(X)
    return MultiViewDataset(views=tuple(views), labels=labels, labeled=np.arange(spec.n))


def mask_labels(ds, ratio, seed):
    """Keep ``ceil(ratio * n)`` uniformly chosen samples labeled.

    The full ground truth moves to ``truth``; rows of the now unlabeled
    samples are zeroed in ``labels``. Feature matrices are shared, not copied.
    """
    if not 0 < ratio <= 1:
        raise ParameterError(f"ratio must lie in (0, 1], got {ratio}")
    truth = ds.ground_truth
    if ds.truth is None and ds.l != ds.n:
        raise ParameterError("mask_labels needs ground truth for every sample")
    n = ds.n
    l = min(n, max(1, math.ceil(ratio * n - 1e-9)))
    rng = np.random.default_rng(seed)
    labeled = np.sort(rng.choice(n, size=l, replace=False))
    labels = np.zeros_like(truth)
    labels[labeled] = truth[labeled]
    return MultiViewDataset(views=ds.views, labels=labels, labeled=labeled, truth=truth.copy())


@dataclass(frozen=True)
class FoldPlan:
    folds: list
    seed: int

    def __len__(self):
        return len(self.folds)


def split_folds(ds, folds, seed):
    """Seeded shuffle then contiguous partition into ``folds`` test sets."""
    n = ds if isinstance(ds, (int, np.integer)) else ds.n
    if folds < 2:
        raise ParameterError("folds must be at least 2")
    if folds > n:
        raise ParameterError(f"folds ({folds}) exceeds the sample count ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    plan = []
    for test in np.array_split(perm, folds):
        test = np.sort(test)
        train = np.setdiff1d(np.arange(n), test)
        plan.append((train, test))
    return FoldPlan(folds=plan, seed=seed)


def _read_csv(path, n_cols=None):
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise LoadError(f"missing file: {path}") from None
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, n_cols or 0))
    try:
        data = np.array([[float(tok) for tok in line.split(",")] for line in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return data


def load_dataset(path):
    """Read a dataset directory (see module docstring for the layout)."""
    path = Path(path)
    view_dir = path / "views"
    if not view_dir.is_dir():
        raise LoadError(f"missing directory: {view_dir}")
    views = []
    v = 0
    while (view_dir / f"view_{v}.csv").exists():
        views.append(_read_csv(view_dir / f"view_{v}.csv"))
        v += 1
    if not views:
        raise LoadError(f"missing file: {view_dir / 'view_0.csv'}")
    n = views[0].shape[0]
    for v, X in enumerate(views):
        if X.shape[0] != n:
            raise ShapeError(f"view_{v}.csv has {X.shape[0]} rows, view_0.csv has {n}")
    labels = _read_csv(path / "labels.csv")
    if labels.shape[0] != n:
        raise ShapeError(f"labels.csv has {labels.shape[0]} rows, views have {n}")

    mask_file = path / "labeled_mask.txt"
    if mask_file.exists():
        tokens = mask_file.read_text(encoding="utf-8").split()
        try:
            labeled = np.array(sorted({int(t) for t in tokens}), dtype=np.intp)
        except ValueError as exc:
            raise ValidationError(f"{mask_file}: {exc}") from None
        if labeled.size and (labeled[0] < 0 or labeled[-1] >= n):
            raise ValidationError(f"{mask_file}: index out of range 0..{n - 1}")
        for i in labeled:
            row = labels[i]
            if np.any(row < 0) or abs(row.sum() - 1.0) > SIMPLEX_TOL:
                raise ValidationError(f"labels.csv row {i} is not a label distribution")
    else:
        ok = np.all(labels >= 0, axis=1) & (np.abs(labels.sum(axis=1) - 1.0) <= SIMPLEX_TOL)
        labeled = np.flatnonzero(ok)
    clean = np.zeros_like(labels)
    clean[labeled] = labels[labeled]
    # rows outside the mask that still hold distributions become evaluation-only truth
    valid = np.all(labels >= 0, axis=1) & (np.abs(labels.sum(axis=1) - 1.0) <= SIMPLEX_TOL)
    truth = labels if labeled.size < n and np.all(valid) else None
    return MultiViewDataset(views=tuple(views), labels=clean, labeled=labeled, truth=truth)


def _write_csv(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(data):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def save_dataset(ds, path, write_mask=None):
    """Write ``ds`` in the directory format.

    ``labels.csv`` holds the training labels (zero rows for unlabeled samples).
    The mask file is written whenever some samples are unlabeled, or when
    ``write_mask`` is True.
    """
    path = Path(path)
    (path / "views").mkdir(parents=True, exist_ok=True)
    for v, X in enumerate(ds.views):
        _write_csv(path / "views" / f"view_{v}.csv", X)
    _write_csv(path / "labels.csv", ds.labels)
    if write_mask is None:
        write_mask = ds.l != ds.n
    if write_mask:
        with open(path / "labeled_mask.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i}\n" for i in ds.labeled)
