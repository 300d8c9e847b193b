"""Similarity graph: reconstruction weights of each sample from its neighbors.

For sample ``i`` the weights live on the union neighbor set ``U_i`` (sorted).
They are stored as a ``(V, n_i)`` array per sample, row ``v`` summing to one.
The global matrix uses the view-major index ``v * n + i``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import qpsolve
from .errors import TrainingError, ValidationError

PER_VIEW_SUPPORT = "per_view_support"
UNION_SUPPORT = "union_support"


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Row weights for every (sample, view) pair.

    ``complemented`` selects the admissible support after initialization:
    the cross-view union ``U_i`` (True) or each view's own neighbors (False).
    """

    weights: list
    nbrs: object
    stage: str = PER_VIEW_SUPPORT
    complemented: bool = True

    @property
    def n(self):
        return self.nbrs.n

    @property
    def V(self):
        return self.nbrs.V

    def support_mask(self, i):
        """Where ``weights[i]`` may be nonzero after the first update."""
        if self.complemented:
            return np.ones((self.V, self.nbrs.union[i].size), dtype=bool)
        return self.nbrs.view_mask(i)

    def dense(self):
        return assemble(self).toarray()


@dataclass(frozen=True)
class SampleGrams:
    """Gram matrices of sample ``i``'s difference vectors, view-major blocks of size n_i."""

    Gx: np.ndarray
    Gd: np.ndarray
    Ecross: np.ndarray

    @property
    def V(self):
        # diagonal of the cross-view matrix is V - 1
        return int(round(self.Ecross[0, 0])) + 1 if self.Ecross.size else 1


def _solve_or_raise(problem, tol, max_iter, x0=None, **context):
    sol = qpsolve.solve(problem, tol=tol, max_iter=max_iter, x0=x0)
    if not sol.converged:
        raise TrainingError(
            f"similarity QP did not converge (residual {sol.kkt_residual:.3g} after {sol.iterations} iterations)",
            **context,
        )
    return sol.x


def init_similarity(ds, nbrs, complemented=True, tol=qpsolve.DEFAULT_TOL,
                    max_iter=qpsolve.DEFAULT_MAX_ITER):
    """Per-view reconstruction weights on each view's own k neighbors.

    For every (i, v) solves ``min ||x_i - sum_j s_j x_j||^2`` over the
    k-simplex and embeds the result into the union support with zeros.
    """
    weights = []
    for i in range(ds.n):
        U = nbrs.union[i]
        row = np.zeros((ds.V, U.size))
        for v, X in enumerate(ds.views):
            N = nbrs.per_view[v, i]
            delta = X[i] - X[N]
            problem = qpsolve.BlockSimplexQP(2.0 * delta @ delta.T, np.zeros(N.size), [np.arange(N.size)])
            row[v, np.searchsorted(U, N)] = _solve_or_raise(problem, tol, max_iter, i=i, v=v)
        weights.append(row)
    return SimilarityGraph(weights=weights, nbrs=nbrs, stage=PER_VIEW_SUPPORT, complemented=complemented)


def feature_gram(ds, nbrs, i):
    """Block-diagonal Gram of the zero-padded feature differences of sample i."""
    U = nbrs.union[i]
    ni = U.size
    Gx = np.zeros((ds.V * ni, ds.V * ni))
    for v, X in enumerate(ds.views):
        delta = X[i] - X[U]
        Gx[v * ni:(v + 1) * ni, v * ni:(v + 1) * ni] = delta @ delta.T
    return Gx


def distribution_gram(D, n, nbrs, i):
    U = nbrs.union[i]
    ni = U.size
    V = nbrs.V
    Gd = np.zeros((V * ni, V * ni))
    for v in range(V):
        delta = D[v * n + i] - D[v * n + U]
        Gd[v * ni:(v + 1) * ni, v * ni:(v + 1) * ni] = delta @ delta.T
    return Gd


def cross_view_matrix(V, ni):
    """``sum_{v<u} (e_v - e_u)(e_v - e_u)^T`` with ``e_v`` the n_i-block selector."""
    return np.kron(V * np.eye(V) - np.ones((V, V)), np.eye(ni))


def consistency_hessian(mask):
    """Quadratic form of the similarity-consistency term for one sample.

    ``sum over ordered view pairs (v, u) of sum_{j in A_v} (s^v_j - s^u_j)^2``
    where ``A_v`` is the admissible support of view v (row ``v`` of ``mask``).
    With every entry admissible this is ``2 * cross_view_matrix``.
    """
    mask = np.asarray(mask, dtype=float)
    V, ni = mask.shape
    C = np.zeros((V * ni, V * ni))
    for v in range(V):
        for u in range(v + 1, V):
            w = mask[v] + mask[u]
            bv = slice(v * ni, (v + 1) * ni)
            bu = slice(u * ni, (u + 1) * ni)
            C[bv, bv] += np.diag(w)
            C[bu, bu] += np.diag(w)
            C[bv, bu] -= np.diag(w)
            C[bu, bv] -= np.diag(w)
    return C


def build_sample_grams(i, ds, nbrs, D):
    return SampleGrams(
        Gx=feature_gram(ds, nbrs, i),
        Gd=distribution_gram(np.asarray(D), ds.n, nbrs, i),
        Ecross=cross_view_matrix(ds.V, nbrs.union[i].size),
    )


def update_similarity_row(i, grams, hyper, mask=None, current=None,
                          tol=qpsolve.DEFAULT_TOL, max_iter=qpsolve.DEFAULT_MAX_ITER):
    """Jointly re-solve sample i's weights in all views on the union support.

    Minimizes ``mu1 s'Gx s + mu2 s'Gd s + sigma * consistency(s)`` with one
    simplex block per view. ``mask`` pins inadmissible entries to zero;
    ``current`` warm-starts the solver and is kept if the solve cannot improve
    on it. Returns a ``(V, n_i)`` array.
    """
    m = grams.Gx.shape[0]
    if mask is None:
        C = 2.0 * grams.Ecross
        V = grams.V
        ni = m // V
        fixed = {}
    else:
        mask = np.asarray(mask, dtype=bool)
        V, ni = mask.shape
        C = consistency_hessian(mask)
        fixed = {int(j): 0.0 for j in np.flatnonzero(~mask.ravel())}
    G = 2.0 * (hyper.mu1 * grams.Gx + hyper.mu2 * grams.Gd + hyper.sigma * C)
    G = 0.5 * (G + G.T)
    blocks = [np.arange(v * ni, (v + 1) * ni) for v in range(V)]
    problem = qpsolve.BlockSimplexQP(G, np.zeros(m), blocks, fixed=fixed)
    x0 = None if current is None else np.asarray(current, dtype=float).ravel()
    x = _solve_or_raise(problem, tol, max_iter, x0=x0, i=i)
    if x0 is not None:
        df, noise = qpsolve.objective_change(problem, x0, x)
        if df > noise:
            x = x0
    return x.reshape(V, ni)


def assemble(graph):
    """Global ``(nV, nV)`` sparse matrix with entry ``(v*n+i, v*n+j) = s_ij^v``."""
    n, V = graph.n, graph.V
    rows, cols, vals = [], [], []
    for i, W in enumerate(graph.weights):
        U = graph.nbrs.union[i]
        for v in range(V):
            rows.append(np.full(U.size, v * n + i))
            cols.append(v * n + U)
            vals.append(W[v])
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * V, n * V)
    )
    S.eliminate_zeros()
    return S


def check_graph(graph, atol=1e-9):
    """Raise :class:`ValidationError` unless every row is a valid simplex row on its support."""
    for i, W in enumerate(graph.weights):
        if W.min() < -1e-12:
            raise ValidationError(f"negative similarity for sample {i}")
        if np.any(np.abs(W.sum(axis=1) - 1.0) > atol):
            raise ValidationError(f"similarity rows of sample {i} do not sum to one")
        if graph.stage == PER_VIEW_SUPPORT:
            allowed = graph.nbrs.view_mask(i)
        else:
            allowed = graph.support_mask(i)
        if np.any(W[~allowed] != 0):
            raise ValidationError(f"similarity of sample {i} is nonzero off its support")


def dump_similarity(graph, path):
    """Write the global matrix as ``row,col,value`` lines."""
    S = assemble(graph).tocoo()
    order = np.lexsort((S.col, S.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, c, val in zip(S.row[order], S.col[order], S.data[order]):
            fh.write(f"{r},{c},{float(val)!r}\n")


def update_similarity(ds, graph, D, hyper, feature_grams=None, tol=qpsolve.DEFAULT_TOL,
                      max_iter=qpsolve.DEFAULT_MAX_ITER):
    """Row-by-row update of every sample given the current distributions.

    ``feature_grams`` may hold precomputed :func:`feature_gram` matrices,
    which do not change during training.
    """
    D = np.asarray(D)
    weights = []
    for i in range(ds.n):
        ni = graph.nbrs.union[i].size
        Gx = feature_grams[i] if feature_grams is not None else feature_gram(ds, graph.nbrs, i)
        grams = SampleGrams(Gx=Gx, Gd=distribution_gram(D, ds.n, graph.nbrs, i),
                            Ecross=cross_view_matrix(ds.V, ni))
        mask = None if graph.complemented else graph.support_mask(i)
        weights.append(update_similarity_row(i, grams, hyper, mask=mask, current=graph.weights[i],
                                             tol=tol, max_iter=max_iter))
    return SimilarityGraph(weights=weights, nbrs=graph.nbrs, stage=UNION_SUPPORT,
                           complemented=graph.complemented)
