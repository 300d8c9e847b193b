"""Per-view k-nearest neighbors and their cross-view union."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError, ValidationError


@dataclass(frozen=True, eq=False)
class NeighborSets:
    """Neighbor indices of every sample.

    Attributes
    ----------
    per_view : (V, n, k) int array
        ``per_view[v, i]`` lists the k nearest neighbors of sample ``i`` in
        view ``v``, nearest first.
    union : list of int arrays
        ``union[i]`` is the sorted union of ``per_view[:, i]`` over views.
    """

    per_view: np.ndarray
    union: list

    @property
    def V(self):
        return self.per_view.shape[0]

    @property
    def n(self):
        return self.per_view.shape[1]

    @property
    def k(self):
        return self.per_view.shape[2]

    @property
    def sizes(self):
        return np.array([u.size for u in self.union], dtype=np.intp)

    def view_mask(self, i):
        """Boolean ``(V, n_i)`` mask: is ``union[i][j]`` a view-``v`` neighbor."""
        return np.stack([np.isin(self.union[i], self.per_view[v, i]) for v in range(self.V)])


def knn_per_view(ds, k):
    """k nearest neighbors per view by Euclidean distance.

    The sample itself is excluded and ties are broken by ascending index.
    Returns a ``(V, n, k)`` int array.
    """
    n = ds.n
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < n = {n}, got {k}")
    out = np.empty((ds.V, n, k), dtype=np.intp)
    for v, X in enumerate(ds.views):
        dist = cdist(X, X, metric="sqeuclidean")
        np.fill_diagonal(dist, np.inf)
        out[v] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


def complement_union(per_view):
    per_view = np.asarray(per_view, dtype=np.intp)
    if per_view.ndim != 3:
        raise ValidationError("per_view must have shape (V, n, k)")
    V, n, k = per_view.shape
    if per_view.size and (per_view.min() < 0 or per_view.max() >= n):
        raise ValidationError("neighbor index out of range")
    for v in range(V):
        if np.any(per_view[v] == np.arange(n)[:, None]):
            raise ValidationError(f"a sample lists itself as a neighbor in view {v}")
    union = [np.unique(per_view[:, i, :]) for i in range(n)]
    return NeighborSets(per_view=per_view, union=union)


def neighbor_sets(ds, k):
    return complement_union(knn_per_view(ds, k))
