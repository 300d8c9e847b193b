"""Label-distribution matrix: graph Laplacians, initialization and update.

``D`` has ``n * V`` rows in view-major order (row ``v * n + i`` is sample
``i`` seen in view ``v``) and one column per label. Rows of labeled samples
are pinned to ground truth in every view; the remaining rows are simplex
points found by a block-simplex QP.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import qpsolve
from .errors import TrainingError, ValidationError
from .graph import assemble


@dataclass(frozen=True, eq=False)
class DistributionMatrix:
    D: np.ndarray
    labeled_rows: np.ndarray
    n: int
    V: int

    @property
    def q(self):
        return self.D.shape[1]

    def view(self, v):
        return self.D[v * self.n:(v + 1) * self.n]

    def sample(self, i):
        """``(V, q)`` array of sample i's rows."""
        return self.D[i::self.n][: self.V]


@dataclass(frozen=True, eq=False)
class GraphLaplacians:
    LD: sp.csr_matrix
    LQ: sp.csr_matrix
    LDtLD: sp.csr_matrix
    n: int
    V: int


def labeled_rows(ds):
    return np.concatenate([v * ds.n + ds.labeled for v in range(ds.V)]).astype(np.intp)


def stacked_truth(ds):
    """Ground truth of the labeled samples repeated for every view (view-major)."""
    return np.vstack([ds.labels[ds.labeled]] * ds.V)


def view_pair_matrix(n, V):
    """``Q`` with ``Q[v*n+i, u*n+i] = 1`` for every sample i and views ``v != u``."""
    return sp.kron(sp.csr_matrix(np.ones((V, V)) - np.eye(V)), sp.identity(n), format="csr")


def build_laplacians(S, n, V, atol=1e-8):
    """``LD = I - S`` and the view-consistency Laplacian ``LQ = G_Q - (Q + Q')/2``."""
    S = sp.csr_matrix(S)
    if S.shape != (n * V, n * V):
        raise ValidationError(f"S has shape {S.shape}, expected ({n * V}, {n * V})")
    row_sums = np.asarray(S.sum(axis=1)).ravel()
    if np.any(np.abs(row_sums - 1.0) > atol) or (S.nnz and S.data.min() < -1e-12):
        raise ValidationError("S must be nonnegative with unit row sums")
    I = sp.identity(n * V, format="csr")
    LD = (I - S).tocsr()
    Q = view_pair_matrix(n, V)
    Qs = 0.5 * (Q + Q.T)
    GQ = sp.diags(np.asarray(Qs.sum(axis=1)).ravel())
    LQ = (GQ - Qs).tocsr()
    return GraphLaplacians(LD=LD, LQ=LQ, LDtLD=(LD.T @ LD).tocsr(), n=n, V=V)


def lifted_hessians(lap, q):
    """Block-diagonal liftings acting on the column-major vectorization of D.

    Returns ``(Lambda1, Lambda2)`` with ``q`` copies of ``LD'LD`` and of
    ``2 * LQ`` on the diagonal; ``2 * LQ`` turns the sum over unordered view
    pairs into the sum over ordered pairs.
    """
    Iq = sp.identity(q, format="csr")
    return sp.kron(Iq, lap.LDtLD, format="csr"), sp.kron(Iq, 2.0 * lap.LQ, format="csr")


def predictions_matrix(ds, params):
    """``H`` with row ``v * n + i`` equal to ``W_v' x_i^v``."""
    return np.vstack([X @ Wv for X, Wv in zip(ds.views, params.per_view)])


def _solve_free_rows(M, free, pinned, D_pinned, lin, q, x0, tol, max_iter, what):
    """Minimize ``sum_c d_c' M d_c + lin' vec(D)`` over the free rows.

    ``lin`` is the ``(nV, q)`` linear coefficient matrix. Pinned rows are
    substituted, leaving one q-simplex block per free row.
    """
    M = sp.csr_matrix(M)
    M_FF = M[free][:, free]
    M_FP = M[free][:, pinned]
    nf = free.size
    G = sp.kron(sp.identity(q, format="csr"), 2.0 * M_FF, format="csr")
    G = 0.5 * (G + G.T)
    C = 2.0 * (M_FP @ D_pinned) + lin[free]
    blocks = list(np.arange(nf)[:, None] + nf * np.arange(q)[None, :])
    problem = qpsolve.BlockSimplexQP(G, C.ravel(order="F"), blocks)
    start = None if x0 is None else x0.ravel(order="F")
    sol = qpsolve.solve(problem, tol=tol, max_iter=max_iter, x0=start)
    if not sol.converged:
        raise TrainingError(
            f"{what} QP did not converge",
            residual=f"{sol.kkt_residual:.3g}",
            iterations=sol.iterations,
        )
    x = sol.x
    if start is not None:
        df, noise = qpsolve.objective_change(problem, start, x)
        if df > noise:
            x = start
    return x.reshape(q, nf).T


def init_distributions(S, ds, tol=qpsolve.DEFAULT_TOL, max_iter=qpsolve.DEFAULT_MAX_ITER):
    """Propagate labeled distributions over the initial graph.

    Minimizes ``tr(D' LD'LD D)`` with labeled rows pinned and every other row
    on the simplex.
    """
    if ds.l == 0:
        raise TrainingError("no labeled samples: label propagation is unanchored")
    n, V, q = ds.n, ds.V, ds.q
    lap = build_laplacians(assemble(S), n, V)
    pinned = labeled_rows(ds)
    free = np.setdiff1d(np.arange(n * V), pinned)
    D = np.zeros((n * V, q))
    D[pinned] = stacked_truth(ds)
    if free.size:
        D[free] = _solve_free_rows(lap.LDtLD, free, pinned, D[pinned], np.zeros((n * V, q)), q,
                                   None, tol, max_iter, "distribution init")
    return DistributionMatrix(D=D, labeled_rows=pinned, n=n, V=V)


def update_distributions(lap, params, ds, hyper, current=None, tol=qpsolve.DEFAULT_TOL,
                         max_iter=qpsolve.DEFAULT_MAX_ITER, separable_fast_path=True):
    """Re-solve D with S and W fixed.

    Minimizes ``lam ||D - H||^2 + mu2 tr(D' LD'LD D) + 2 gamma tr(D' LQ D)``.
    When ``mu2 = gamma = 0`` the problem separates by row and each free row
    is the simplex projection of its ``H`` row.
    """
    n, V, q = ds.n, ds.V, ds.q
    H = predictions_matrix(ds, params)
    pinned = labeled_rows(ds)
    free = np.setdiff1d(np.arange(n * V), pinned)
    D = np.zeros((n * V, q))
    D[pinned] = stacked_truth(ds)
    if free.size == 0:
        return DistributionMatrix(D=D, labeled_rows=pinned, n=n, V=V)
    if separable_fast_path and hyper.mu2 == 0 and hyper.gamma == 0:
        D[free] = qpsolve._project_rows(H[free], np.ones(free.size))
        return DistributionMatrix(D=D, labeled_rows=pinned, n=n, V=V)
    M = hyper.lam * sp.identity(n * V, format="csr") + hyper.mu2 * lap.LDtLD + 2.0 * hyper.gamma * lap.LQ
    x0 = None if current is None else current.D[free]
    D[free] = _solve_free_rows(M, free, pinned, D[pinned], -2.0 * hyper.lam * H, q, x0, tol, max_iter,
                               "distribution update")
    return DistributionMatrix(D=D, labeled_rows=pinned, n=n, V=V)


def check_distributions(dm, ds, atol=1e-9):
    D = dm.D
    if D.min() < -1e-12:
        raise ValidationError("negative label description degree")
    if np.any(np.abs(D.sum(axis=1) - 1.0) > atol):
        raise ValidationError("distribution rows do not sum to one")
    if not np.array_equal(D[labeled_rows(ds)], stacked_truth(ds)):
        raise ValidationError("labeled rows differ from ground truth")
