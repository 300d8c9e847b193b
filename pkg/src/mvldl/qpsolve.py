"""Convex quadratic programs over a product of simplices.

Solves

    min  1/2 x'Gx + c'x
    s.t. x >= 0,  sum(x[b]) = t_b for every block b,

optionally with some coordinates pinned to given values. Both the similarity
update and the label-distribution update reduce to this form.

The method is accelerated projected gradient (FISTA) with a monotone restart,
step 1/L from a power-iteration estimate of the largest eigenvalue of G, and a
periodic primal active-set refinement that solves the equality-constrained
problem on the current face. The refinement is what gets ill-conditioned and
singular Hessians to tight KKT tolerances.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FeasibilityError, ParameterError, QpProblemError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10000

_CURVATURE_TOL = 1e-8
_CHECK_EVERY = 5
_POLISH_EVERY = 10
_DENSE_KKT_LIMIT = 600
_REFINE_STEPS = 50
_START_REFINE_STEPS = 1
_DUST = 1e-9


@dataclass(frozen=True)
class BlockSimplexQP:
    """Problem data.

    Parameters
    ----------
    G : (m, m) ndarray or scipy sparse matrix
        Symmetric positive semidefinite Hessian.
    c : (m,) ndarray
        Linear term.
    blocks : sequence of int arrays
        Disjoint index blocks covering every non-fixed variable.
    targets : (n_blocks,) ndarray, optional
        Required block sums; defaults to ones.
    fixed : mapping int -> float, optional
        Variables pinned to a value. They may belong to a block, in which
        case the block's free variables share the remaining mass.
    """

    G: object
    c: np.ndarray
    blocks: Sequence[np.ndarray]
    targets: Optional[np.ndarray] = None
    fixed: Optional[Mapping[int, float]] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        object.__setattr__(self, "c", c)
        m = c.shape[0]
        G = self.G
        if not sp.issparse(G):
            G = np.asarray(G, dtype=float)
            object.__setattr__(self, "G", G)
        if G.shape != (m, m):
            raise QpProblemError(f"G has shape {G.shape}, expected ({m}, {m})")
        asym = abs(G - G.T)
        asym = asym.max() if asym.size else 0.0
        if asym > 1e-10:
            raise QpProblemError(f"G is not symmetric (max asymmetry {asym:.3g})")

        blocks = [np.asarray(b, dtype=np.intp).ravel() for b in self.blocks]
        object.__setattr__(self, "blocks", blocks)
        targets = np.ones(len(blocks)) if self.targets is None else np.asarray(self.targets, float)
        if targets.shape != (len(blocks),):
            raise QpProblemError("targets must have one entry per block")
        object.__setattr__(self, "targets", targets)
        fixed = dict(self.fixed or {})
        object.__setattr__(self, "fixed", fixed)

        owner = np.full(m, -1, dtype=np.intp)
        for bi, b in enumerate(blocks):
            if b.size == 0:
                raise QpProblemError(f"block {bi} is empty")
            if b.min() < 0 or b.max() >= m:
                raise QpProblemError(f"block {bi} has an index outside 0..{m - 1}")
            if np.any(owner[b] >= 0) or np.unique(b).size != b.size:
                raise QpProblemError(f"block {bi} overlaps another block")
            owner[b] = bi
        for j in fixed:
            if not 0 <= j < m:
                raise QpProblemError(f"fixed index {j} outside 0..{m - 1}")
        free = np.ones(m, dtype=bool)
        free[list(fixed)] = False
        if np.any(owner[free] < 0):
            raise QpProblemError("blocks do not cover every non-fixed variable")

    @property
    def m(self):
        return self.c.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool = field(default=True)


def _project_rows(Y, t):
    """Project each row of ``Y`` onto {y >= 0, sum(y) = t_row} (sort and threshold)."""
    nb, s = Y.shape
    U = -np.sort(-Y, axis=1)
    css = np.cumsum(U, axis=1) - t[:, None]
    cond = U * np.arange(1, s + 1) > css
    rho = s - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(nb), rho] / (rho + 1)
    out = np.maximum(Y - theta[:, None], 0.0)
    zero = t <= 0
    if np.any(zero):
        out[zero] = 0.0
    return out


class _BlockProjector:
    """Projection onto a product of simplices, vectorized over equal-sized blocks."""

    def __init__(self, blocks, targets):
        by_size = {}
        for b, t in zip(blocks, targets):
            by_size.setdefault(b.size, ([], []))
            by_size[b.size][0].append(b)
            by_size[b.size][1].append(t)
        self.groups = [(np.vstack(idx), np.asarray(t, dtype=float)) for idx, t in by_size.values()]

    def __call__(self, x):
        out = x.copy()
        for idx, t in self.groups:
            out[idx] = _project_rows(x[idx], t)
        return out


def project_block_simplex(x, blocks, targets=None):
    """Euclidean projection of ``x`` onto a product of scaled simplices.

    Each block ``b`` is projected onto ``{y >= 0, sum(y) = targets[b]}``;
    coordinates not covered by any block are returned unchanged.

    >>> project_block_simplex(np.array([1.5, -0.5]), [np.array([0, 1])])
    array([1., 0.])
    """
    x = np.asarray(x, dtype=float)
    blocks = [np.asarray(b, dtype=np.intp).ravel() for b in blocks]
    if any(b.size == 0 for b in blocks):
        raise ParameterError("empty block")
    targets = np.ones(len(blocks)) if targets is None else np.asarray(targets, dtype=float)
    if np.any(targets < 0):
        raise ParameterError("block targets must be nonnegative")
    return _BlockProjector(blocks, targets)(x)


@dataclass
class _Reduced:
    G: object
    c: np.ndarray
    blocks: list
    targets: np.ndarray
    free: Optional[np.ndarray]
    x_fixed: Optional[np.ndarray]
    const: float
    project: _BlockProjector


def _reduce(problem):
    """Eliminate pinned variables by substitution."""
    G, c = problem.G, problem.c
    if not problem.fixed:
        return _Reduced(G, c, problem.blocks, problem.targets, None, None, 0.0,
                        _BlockProjector(problem.blocks, problem.targets))
    m = problem.m
    fixed_idx = np.array(sorted(problem.fixed), dtype=np.intp)
    fixed_val = np.array([problem.fixed[j] for j in fixed_idx], dtype=float)
    mask = np.ones(m, dtype=bool)
    mask[fixed_idx] = False
    free = np.flatnonzero(mask)
    pos = np.full(m, -1, dtype=np.intp)
    pos[free] = np.arange(free.size)
    xf = np.zeros(m)
    xf[fixed_idx] = fixed_val

    blocks, targets = [], []
    for b, t in zip(problem.blocks, problem.targets):
        rest = t - xf[b].sum()
        fb = pos[b][pos[b] >= 0]
        if rest < -1e-12:
            raise QpProblemError("fixed entries exceed their block target")
        if fb.size == 0:
            if abs(rest) > 1e-9:
                raise QpProblemError("fully fixed block does not meet its target")
            continue
        blocks.append(fb)
        targets.append(max(rest, 0.0))
    targets = np.asarray(targets, dtype=float)

    if sp.issparse(G):
        G = sp.csr_matrix(G)
        G_ff = G[free][:, free]
        G_fx = G[free][:, fixed_idx]
        G_xx = G[fixed_idx][:, fixed_idx]
    else:
        G_ff = G[np.ix_(free, free)]
        G_fx = G[np.ix_(free, fixed_idx)]
        G_xx = G[np.ix_(fixed_idx, fixed_idx)]
    c_red = c[free] + G_fx @ fixed_val
    const = 0.5 * fixed_val @ (G_xx @ fixed_val) + c[fixed_idx] @ fixed_val
    return _Reduced(G_ff, np.asarray(c_red).ravel(), blocks, targets, free, xf, float(const),
                    _BlockProjector(blocks, targets) if blocks else None)


def _expand(red, z):
    if red.free is None:
        return z
    x = red.x_fixed.copy()
    x[red.free] = z
    return x


def _power_iteration(G, iters=200, rtol=1e-7):
    m = G.shape[0]
    rng = np.random.default_rng(20240917)
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - est) <= rtol * nw:
            est = nw
            break
        est = nw
    return est


class _Core:
    """Iteration state for the reduced problem."""

    def __init__(self, red):
        self.G = red.G
        self.c = red.c
        self.project = red.project
        self.blocks = red.blocks
        self.targets = red.targets
        self.m = red.c.shape[0]
        self.block_of = np.full(self.m, -1, dtype=np.intp)
        for bi, b in enumerate(red.blocks):
            self.block_of[b] = bi

    def f(self, x, Gx):
        return 0.5 * x @ Gx + self.c @ x

    def residual(self, x, Gx):
        if self.m == 0:
            return 0.0
        return float(np.max(np.abs(x - self.project(x - (Gx + self.c)))))

    def change(self, x, Gx, z, Gz):
        """``f(z) - f(x)`` and its rounding bound.

        Written as ``(z - x)'((Gx + Gz)/2 + c)`` so the error shrinks with the
        step instead of scaling with ``f`` itself.
        """
        d = z - x
        mid = 0.5 * (Gx + Gz) + self.c
        noise = 32 * np.finfo(float).eps * (np.abs(d) @ (np.abs(Gx) + np.abs(Gz) + np.abs(self.c)))
        return float(d @ mid), float(noise)

    def accept(self, x, Gx, z, Gz):
        """Is ``z`` at least as good as ``x``?

        A clear decrease always counts; a change inside rounding counts only
        if it also lowers the KKT residual.
        """
        df, noise = self.change(x, Gx, z, Gz)
        if df <= -noise:
            return True
        return df <= noise and self.residual(z, Gz) < self.residual(x, Gx)

    def project_face(self, y, face):
        """Projection that keeps every coordinate outside ``face`` at zero."""
        with np.errstate(invalid="ignore"):
            return self.project(np.where(face, y, -np.inf))

    def check_curvature(self, d, Gd=None):
        dd = d @ d
        Gd = self.G @ d if Gd is None else Gd
        dGd = float(d @ Gd)
        if dd > 0 and dGd < -_CURVATURE_TOL * dd:
            raise QpProblemError("Hessian has negative curvature; problem is not convex")
        return dGd, dd

    def _kkt_solve(self, A):
        """Stationary point of the QP restricted to the face {x_j = 0, j not in A}."""
        blk = self.block_of[A]
        used, rows = np.unique(blk, return_inverse=True)
        na, nb = A.size, used.size
        rhs = np.concatenate([-self.c[A], self.targets[used]])
        if sp.issparse(self.G):
            G_AA = sp.csr_matrix(self.G)[A][:, A]
            B = sp.csr_matrix((np.ones(na), (rows, np.arange(na))), shape=(nb, na))
            K = sp.bmat([[G_AA, B.T], [B, None]], format="csc")
            if K.shape[0] <= _DENSE_KKT_LIMIT:
                K = K.toarray()
                solve_k = lambda r: np.linalg.lstsq(K, r, rcond=None)[0]  # noqa: E731
            else:
                try:
                    solve_k = spla.splu(K).solve
                except RuntimeError:
                    solve_k = lambda r: spla.lsmr(K, r, atol=1e-14, btol=1e-14,  # noqa: E731
                                                  maxiter=20 * K.shape[0])[0]
        else:
            K = np.zeros((na + nb, na + nb))
            K[:na, :na] = self.G[np.ix_(A, A)]
            K[na + rows, np.arange(na)] = 1.0
            K[np.arange(na), na + rows] = 1.0
            solve_k = lambda r: np.linalg.lstsq(K, r, rcond=None)[0]  # noqa: E731
        sol = solve_k(rhs)
        # one step of iterative refinement: the KKT matrix mixes the scale of
        # G with unit constraint rows, and the stationarity residual (not the
        # forward error) is what the stopping test measures
        r = rhs - K @ sol
        if np.all(np.isfinite(r)):
            better = sol + solve_k(r)
            if np.all(np.isfinite(better)) and np.max(np.abs(rhs - K @ better)) < np.max(np.abs(r)):
                sol = better
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:na]

    def refine(self, x, Gx, max_steps):
        """Primal active-set refinement starting from the face of ``x``.

        Each step moves to the minimizer of the current working face. If that
        point is infeasible, its projection is tried first (it can drop many
        bounds at once) and otherwise the step stops at the first blocking
        bound. At a face minimizer, every variable with a negative reduced cost
        is freed. Returns the final ``(x, Gx)``.
        """
        # snap iterate dust to zero so the first face is the likely optimal one
        dust = (x > 0) & (x < _DUST * np.maximum(self.targets, 1.0)[self.block_of])
        if np.any(dust):
            snapped = self.project_face(x, ~dust & (x > 0))
            Gs = self.G @ snapped
            if self.accept(x, Gx, snapped, Gs):
                x, Gx = snapped, Gs
        work = x > 0
        for _ in range(max_steps):
            A = np.flatnonzero(work)
            if A.size == 0:
                break
            xa = self._kkt_solve(A)
            if xa is None:
                break
            scale = max(1.0, float(np.max(np.abs(xa))))
            hit = None
            if np.any(xa < -1e-10 * scale):
                proj = np.zeros(self.m)
                proj[A] = xa
                proj = self.project(proj)
                Gp = self.G @ proj
                if self.change(x, Gx, proj, Gp)[0] < 0:
                    x, Gx = proj, Gp
                    work = x > 0
                    continue
                d = xa - x[A]
                neg = d < 0
                alpha = min(1.0, float(np.min(x[A][neg] / -d[neg])))
                cand = x.copy()
                cand[A] = x[A] + alpha * d
                hit = A[neg & (cand[A] <= 1e-14 * scale)]
                cand[hit] = 0.0
                cand = self.project_face(cand, cand > 0)
            else:
                cand = np.zeros(self.m)
                cand[A] = xa
                cand = self.project_face(cand, work)
            Gc = self.G @ cand
            if not self.accept(x, Gx, cand, Gc):
                break
            x, Gx = cand, Gc
            work = x > 0
            if hit is not None:
                if hit.size == 0:
                    break
                continue
            # at a face minimizer: free variables whose reduced cost is negative
            g = Gx + self.c
            nu = np.full(len(self.blocks), np.inf)
            np.minimum.at(nu, self.block_of[work], g[work])
            reduced = g - nu[self.block_of]
            enter = (~work) & (reduced < -1e-13 * max(1.0, float(np.max(np.abs(g)))))
            if not np.any(enter):
                break
            work = work | enter
        return x, Gx


def _start_point(red, x0):
    if x0 is not None:
        z = np.asarray(x0, dtype=float).ravel()
        if red.free is not None:
            z = z[red.free]
        return red.project(z)
    z = np.zeros(red.c.shape[0])
    for b, t in zip(red.blocks, red.targets):
        z[b] = t / b.size
    return z


def solve(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, x0=None):
    """Minimize a :class:`BlockSimplexQP`.

    Starts from ``x0`` (projected onto the feasible set) when given, otherwise
    from the uniform point of every block. Stops once the projected-gradient
    fixed-point residual is at most ``tol``; if ``max_iter`` runs out first the
    best iterate is returned with ``converged=False``.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    red = _reduce(problem)
    if red.project is None:
        x = _expand(red, np.zeros(0))
        return QpSolution(x, red.const, 0.0, 0, True)

    core = _Core(red)
    x = _start_point(red, x0)
    Gx = core.G @ x
    res = core.residual(x, Gx)
    it = 0
    if res > tol:
        # cheap when a warm start already sits on the optimal face
        x, Gx = core.refine(x, Gx, _START_REFINE_STEPS)
        res = core.residual(x, Gx)
    if res > tol:
        L = 1.01 * _power_iteration(core.G)
        if L <= 0.0:
            L = 1.0
        x_prev, Gx_prev = x, Gx
        t = 1.0
        while it < max_iter:
            it += 1
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            y = x + beta * (x - x_prev)
            Gy = Gx + beta * (Gx - Gx_prev)
            z = core.project(y - (Gy + core.c) / L)
            Gz = core.G @ z
            if it == 1 or core.change(x, Gx, z, Gz)[0] > 0:
                # momentum overshoot: plain projected-gradient step from x;
                # L grows only if the measured curvature exceeds it
                t_next = 1.0
                while True:
                    z = core.project(x - (Gx + core.c) / L)
                    Gz = core.G @ z
                    d = z - x
                    dGd, dd = core.check_curvature(d)
                    if dGd <= L * dd * (1 + 1e-12) or L > 1e300:
                        break
                    L = 2.0 * dGd / dd
            x_prev, Gx_prev = x, Gx
            x, Gx = z, Gz
            t = t_next
            if it % _POLISH_EVERY == 0:
                x_ref, Gx_ref = core.refine(x, Gx, _REFINE_STEPS)
                if x_ref is not x:
                    x, Gx = x_ref, Gx_ref
                    x_prev, Gx_prev, t = x, Gx, 1.0
            if it % _CHECK_EVERY == 0 or it % _POLISH_EVERY == 0:
                res = core.residual(x, Gx)
                if res <= tol:
                    break
        res = core.residual(x, Gx)
    fx = core.f(x, Gx)
    return QpSolution(
        x=_expand(red, x),
        objective=float(fx + red.const),
        kkt_residual=res,
        iterations=it,
        converged=bool(res <= tol),
    )


def objective(problem, x):
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ (problem.G @ x) + problem.c @ x)


def objective_change(problem, x, z):
    """``f(z) - f(x)`` evaluated stably, with a bound on its rounding error."""
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    d = z - x
    Gx, Gz = problem.G @ x, problem.G @ z
    noise = 32 * np.finfo(float).eps * (np.abs(d) @ (np.abs(Gx) + np.abs(Gz) + np.abs(problem.c)))
    return float(d @ (0.5 * (Gx + Gz) + problem.c)), float(noise)


def kkt_residual(problem, x):
    """Fixed-point residual ``max |x - P(x - (Gx + c))|`` over the free variables.

    Raises :class:`FeasibilityError` if ``x`` is not feasible within 1e-6.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (problem.m,):
        raise FeasibilityError(f"x has shape {x.shape}, expected ({problem.m},)")
    if x.size and x.min() < -1e-6:
        raise FeasibilityError(f"negative entry {x.min():.3g}")
    for j, val in problem.fixed.items():
        if abs(x[j] - val) > 1e-6:
            raise FeasibilityError(f"fixed variable {j} is {x[j]!r}, expected {val!r}")
    for b, t in zip(problem.blocks, problem.targets):
        if abs(x[b].sum() - t) > 1e-6:
            raise FeasibilityError(f"block sum {x[b].sum():.9g} differs from target {t:.9g}")
    red = _reduce(problem)
    if red.project is None:
        return 0.0
    core = _Core(red)
    z = x if red.free is None else x[red.free]
    return core.residual(z, core.G @ z)
