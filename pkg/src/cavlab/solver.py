"""Linear elliptic solves, minimisation of F_eps and eps-continuation.

Outer iteration for F_eps: split B_eps = k * t^+ + D(t), where k is the
right slope at 0 (the convex kink) and D is what remains. Each step
linearises D at the current iterate and minimises the resulting convex,
piecewise-quadratic model exactly with a primal-dual active-set loop:

    min  1/2 u^T A u - b^T u + h^n sum_i [ k u_i^+ + D'(u^k_i) u_i ]

For the indicator profile D is concave, the model majorises F_eps and
every full step decreases the energy. Otherwise the step is backtracked
towards u^k until F_eps decreases.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.special import expit
from scipy.interpolate import RegularGridInterpolator

from .energy import (EnergyBreakdown, GridFunction, GridMismatchError, energy_ac,
                     energy_eps, stationarity_residual)
from .field import BoundaryData, CoefficientField, Grid
from .potential import (PerturbationProfile, beta_eps, convex_curvature_eps, convex_primitive_eps,
                        convex_slope_eps, kink_slope, smooth_part_slope)

log = logging.getLogger(__name__)

LINEAR_SOLVERS = ("direct", "cg-jacobi", "cg-amg")


class SolverError(RuntimeError):
    pass


class LinearSolveError(SolverError):
    def __init__(self, msg: str, trace: Sequence[float]):
        super().__init__(f"{msg} (last residuals: {list(trace)[-5:]})")
        self.trace = list(trace)


ROUNDOFF = 1e-12  # relative energy tie treated as no change


@dataclass(frozen=True)
class SolveOptions:
    residual_tol: float = 1e-8   # relative to Lambda*|u|_inf/h^2 + sup(beta_eps)
    max_outer: int = 200
    cg_tol: float = 1e-10        # relative
    cg_maxiter: int = 20000
    shrink: float = 0.5
    max_backtracks: int = 40
    linear_solver: str = "direct"
    active_set_maxiter: int = 500
    nested: bool = True          # cold starts begin from a coarse-grid solve
    interface_search: int = 0    # max interface shifts (h/2 each) tried per rung

    def __post_init__(self):
        if not (self.residual_tol > 0 and self.cg_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("line-search shrink factor must lie in (0, 1)")
        if self.interface_search < 0:
            raise ValueError("interface_search must be nonnegative")
        if self.max_outer < 1 or self.cg_maxiter < 1:
            raise ValueError("iteration budgets must be positive")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}")


# --------------------------------------------------------------------------
# linear algebra

def pcg(A, b: np.ndarray, x0: np.ndarray | None = None,
        precond: Callable[[np.ndarray], np.ndarray] | None = None,
        tol: float = 1e-10, maxiter: int = 20000) -> tuple[np.ndarray, list[float]]:
    """Preconditioned conjugate gradients; stops at |r| <= tol |b|."""
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = float(np.linalg.norm(b))
    trace = [float(np.linalg.norm(r))]
    if bnorm == 0.0:
        return np.zeros_like(b), trace
    if trace[0] <= tol * bnorm:
        return x, trace
    z = precond(r) if precond else r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise LinearSolveError("matrix is not positive definite", trace)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        trace.append(float(np.linalg.norm(r)))
        if trace[-1] <= tol * bnorm:
            return x, trace
        z = precond(r) if precond else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveError(f"CG did not converge in {maxiter} iterations", trace)


class _SubsystemSolver:
    """Solves principal subsystems of a fixed SPD matrix, caching the last one."""

    def __init__(self, A: sp.csr_matrix, options: SolveOptions):
        self.A = A.tocsr()
        self.options = options
        self._key = None
        self._solve = None
        self.count = 0

    def _build(self, sub: sp.csr_matrix):
        method = self.options.linear_solver
        if method == "direct":
            lu = spla.splu(sub.tocsc(), permc_spec="MMD_AT_PLUS_A")
            return lambda rhs, x0: lu.solve(rhs)
        if method == "cg-jacobi":
            inv = 1.0 / sub.diagonal()
            pre = lambda r: inv * r
        else:
            import pyamg
            ml = pyamg.smoothed_aggregation_solver(sub, symmetry="symmetric")
            M = ml.aspreconditioner(cycle="V")
            pre = lambda r: M @ r
        opts = self.options
        return lambda rhs, x0: pcg(sub, rhs, x0, pre, opts.cg_tol, opts.cg_maxiter)[0]

    def solve(self, mask: np.ndarray, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        key = mask.tobytes()
        if key != self._key:
            idx = np.flatnonzero(mask)
            self._solve = self._build(self.A[idx][:, idx].tocsr())
            self._key = key
        self.count += 1
        return self._solve(rhs, x0)


@dataclass
class _Problem:
    """Interior/boundary split of the discrete Dirichlet problem."""
    grid: Grid
    free: np.ndarray          # flat bool mask of interior nodes
    A: sp.csr_matrix          # K restricted to interior
    b: np.ndarray             # -K_FB phi_B
    phi: np.ndarray           # flat nodal boundary values

    @classmethod
    def build(cls, fld: CoefficientField, boundary: BoundaryData) -> "_Problem":
        if boundary.grid != fld.grid:
            raise GridMismatchError("boundary data and field live on different grids")
        K = fld.stiffness
        free = ~fld.grid.boundary_mask.ravel()
        fi, bi = np.flatnonzero(free), np.flatnonzero(~free)
        phi = boundary.values.ravel()
        return cls(fld.grid, free, K[fi][:, fi].tocsr(), -(K[fi][:, bi] @ phi[bi]), phi)

    def assemble(self, interior: np.ndarray) -> GridFunction:
        v = self.phi.copy()
        v[self.free] = interior
        return GridFunction(self.grid, v.reshape(self.grid.shape))


def solve_linear(fld: CoefficientField, rhs, boundary: BoundaryData,
                 options: SolveOptions | None = None) -> GridFunction:
    """Solve div(a grad u) = rhs in the interior with u = phi on the boundary."""
    options = options or SolveOptions()
    prob = _Problem.build(fld, boundary)
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), fld.grid.shape).ravel()
    g = prob.b - fld.grid.cell_volume * rhs[prob.free]
    solver = _SubsystemSolver(prob.A, options)
    x = solver.solve(np.ones(prob.A.shape[0], dtype=bool), g)
    return prob.assemble(x)


def _obstacle(solver: _SubsystemSolver, f: np.ndarray, u: np.ndarray | None,
              mu: np.ndarray | None, maxiter: int) -> tuple[np.ndarray, np.ndarray]:
    """min 1/2 u^T A u - f^T u subject to u >= 0, primal-dual active sets.

    mu = A u - f is the multiplier of the constraint. Cold starts begin from
    the unconstrained minimiser; for M-matrices the iteration is monotone
    and terminates.
    """
    A = solver.A
    n = f.size
    gamma = A.diagonal()
    every = np.ones(n, dtype=bool)
    if mu is None or u is None:
        u = solver.solve(every, f, u)
        mu = np.zeros(n)
    prev = None
    for _ in range(maxiter):
        active = mu - gamma * u > 0
        if prev is not None and np.array_equal(active, prev):
            return u, mu
        prev = active
        free = ~active
        u = np.zeros(n)
        if free.any():
            u[free] = solver.solve(free, f[free], None)
        mu = np.where(active, A @ u - f, 0.0)
    raise SolverError(f"active-set iteration did not settle in {maxiter} steps")


def _kink_qp(solver: _SubsystemSolver, c: np.ndarray, kappa: float, u: np.ndarray,
             lam: np.ndarray | None, maxiter: int) -> tuple[np.ndarray, np.ndarray]:
    """min 1/2 u^T A u - c^T u + kappa * sum(u^+).

    Returns the minimiser and a warm-start state for the next call. When
    c >= 0 the minimiser is nonnegative (A is an M-matrix) and the problem
    is the obstacle problem with load c - kappa. Otherwise a primal-dual
    active-set loop on the multiplier lam in [0, kappa] is used; if it
    cycles or stalls, a smoothed Newton solve supplies a close start.
    """
    A = solver.A
    n = c.size
    if kappa == 0.0:
        return solver.solve(np.ones(n, dtype=bool), c, u), None
    if np.all(c >= 0):
        f = c - kappa
        if lam is None:
            # active set guessed from the zero set of the current iterate
            u = np.maximum(u, 0.0)
            lam = np.where(u == 0, np.maximum(A @ u - f, 0.0), 0.0)
        return _obstacle(solver, f, u, lam, maxiter)
    lam = np.where(u > 0, kappa, np.where(u < 0, 0.0, np.clip(c - A @ u, 0.0, kappa)))
    try:
        return _signed_active_set(solver, c, kappa, u, lam, min(maxiter, 50))
    except SolverError:
        u, lam = _smoothed_kink(solver, c, kappa, u)
        try:
            return _signed_active_set(solver, c, kappa, u, lam, maxiter)
        except SolverError:
            # snap the smoothed layer to exact zeros and finish with descent steps
            u = np.where(np.abs(u) <= 1e-9 * max(float(np.abs(u).max(initial=0.0)), 1e-300), 0.0, u)
            return _primal_kink(solver, c, kappa, u, maxiter), None


def _signed_active_set(solver: _SubsystemSolver, c: np.ndarray, kappa: float, u: np.ndarray,
                       lam: np.ndarray, maxiter: int) -> tuple[np.ndarray, None]:
    A = solver.A
    n = c.size
    gamma = A.diagonal()
    seen = set()
    prev = None
    for _ in range(maxiter):
        z = lam + gamma * u
        P = z > kappa
        N = z < 0.0
        state = np.packbits(P).tobytes() + np.packbits(N).tobytes()
        if state == prev:
            return u, None
        if state in seen:
            raise SolverError("active-set iteration cycles")
        seen.add(state)
        prev = state
        free = P | N
        u = np.zeros(n)
        if free.any():
            u[free] = solver.solve(free, c[free] - kappa * P[free], None)
        lam = np.where(P, kappa, np.where(N, 0.0, c - A @ u))
    raise SolverError(f"active-set iteration did not settle in {maxiter} steps")


def _smoothed_kink(solver: _SubsystemSolver, c: np.ndarray, kappa: float,
                   u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Approximate minimiser with kappa * t^+ replaced by kappa * mu * softplus(t / mu).

    Damped Newton at each smoothing width mu, mu shrinking geometrically;
    the smoothed problems are strictly convex and smooth, so this cannot
    stall. Returns (u, multiplier estimate in [0, kappa]).
    """
    A = solver.A
    scale = max(float(np.abs(u).max(initial=0.0)), kappa / float(A.diagonal().max()), 1e-300)
    mu = 0.1 * scale
    every = np.ones(c.size, dtype=bool)

    def q(x, mu):
        return 0.5 * float(x @ (A @ x)) - float(c @ x) + kappa * mu * float(np.sum(np.logaddexp(0.0, x / mu)))

    while mu > 1e-13 * scale:
        Qu = q(u, mu)
        for _ in range(50):
            sig = expit(u / mu)
            grad = A @ u - c + kappa * sig
            H = (A + sp.diags(kappa / mu * sig * (1.0 - sig))).tocsr()
            step = _SubsystemSolver(H, solver.options).solve(every, -grad, None)
            solver.count += 1
            slope = float(grad @ step)
            if -slope <= 1e-15 * max(1.0, abs(Qu)):
                break
            t = 1.0
            while True:
                cand = u + t * step
                Qc = q(cand, mu)
                if Qc <= Qu + 1e-4 * t * slope or t < 1e-12:
                    break
                t *= 0.5
            if not Qc < Qu:
                break
            u, Qu = cand, Qc
        mu *= 0.1
    return u, kappa * expit(u / (10 * mu))


def _line_min(A, c: np.ndarray, kappa: float, u: np.ndarray, d: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact minimiser over t in [0, 1] of q(u + t d), q convex piecewise quadratic.

    Returns t and the indices whose breakpoint equals t (to be snapped to 0).
    """
    curv = float(d @ (A @ d))
    lin = float(d @ (A @ u - c))
    moving = d != 0
    t_br = np.full(u.size, np.inf)
    t_br[moving] = -u[moving] / d[moving]
    cand = np.flatnonzero((t_br > 0) & (t_br <= 1))
    order = cand[np.argsort(t_br[cand], kind="stable")]
    # slope contribution of kinked nodes on the first segment (0, t_1)
    pos_dir = (u > 0) | ((u == 0) & (d > 0))
    kslope = kappa * float(d[pos_dir].sum())
    lo = 0.0
    k = 0
    while True:
        hi = t_br[order[k]] if k < len(order) else 1.0
        # derivative on (lo, hi): curv * t + lin + kslope
        if curv > 0:
            t = -(lin + kslope) / curv
        else:
            t = hi if lin + kslope < 0 else lo
        if t <= lo:
            return lo, (order[k - 1:k] if k > 0 else order[:0])
        if t < hi or k >= len(order):
            return min(t, hi), order[:0]
        # crossing breakpoint(s) at hi: update kinked slope
        same = [order[k]]
        while k + 1 < len(order) and t_br[order[k + 1]] == hi:
            k += 1
            same.append(order[k])
        same = np.asarray(same)
        kslope += kappa * float(np.sum(np.where(d[same] > 0, d[same], -d[same])))
        # a node with d > 0 enters the positive phase, d < 0 leaves it
        lo = hi
        k += 1
        # if the derivative just right of the breakpoint is nonnegative, stop at it
        if curv * lo + lin + kslope >= 0:
            return lo, same


def _primal_kink(solver: _SubsystemSolver, c: np.ndarray, kappa: float, u: np.ndarray,
                 maxiter: int) -> np.ndarray:
    """Primal active-set method for min 1/2 u^T A u - c^T u + kappa * sum(u^+).

    Phases (u > 0, u < 0, u = 0) are fixed per step; the step to the
    minimiser of that piece is cut by an exact line search through the
    breakpoints, and zero nodes whose multiplier leaves [0, kappa] are
    released. The objective decreases strictly, so the phases never repeat.
    """
    A = solver.A
    n = c.size
    tol = 1e-12 * max(kappa, float(np.abs(c).max(initial=0.0)))
    for _ in range(maxiter):
        P, N = u > 0, u < 0
        Z = ~(P | N)
        mult = c - A @ u
        up = Z & (mult > kappa + tol)
        down = Z & (mult < -tol)
        free = P | N
        v = np.zeros(n)
        if free.any():
            v[free] = solver.solve(free, c[free] - kappa * P[free], None)
        d = v - u
        if np.abs(d).max(initial=0.0) <= 1e-14 * max(1.0, float(np.abs(u).max(initial=0.0))):
            if not (up.any() or down.any()):
                return v
            # release the worst violator on each side with the others
            P2, N2 = P | up, N | down
            free = P2 | N2
            v = np.zeros(n)
            v[free] = solver.solve(free, c[free] - kappa * P2[free], None)
            d = v - u
        t, snap = _line_min(A, c, kappa, u, d)
        if t == 0.0 and len(snap) == 0:
            if not (up.any() or down.any()):
                return u    # piece minimiser up to round-off
            # released set gave no descent: release only the largest violation
            viol = np.where(up, mult - kappa, 0.0) + np.where(down, -mult, 0.0)
            i = int(np.argmax(viol))
            P2, N2 = P.copy(), N.copy()
            (P2 if up[i] else N2)[i] = True
            free = P2 | N2
            v = np.zeros(n)
            v[free] = solver.solve(free, c[free] - kappa * P2[free], None)
            d = v - u
            t, snap = _line_min(A, c, kappa, u, d)
            if t == 0.0 and len(snap) == 0:
                raise SolverError("primal active-set method stalled")
        u = u + t * d
        u[snap] = 0.0
    raise SolverError(f"primal active-set method did not finish in {maxiter} steps")


def _convex_newton(solver: _SubsystemSolver, c: np.ndarray, weight: float,
                   profile: PerturbationProfile, eps: float, u: np.ndarray,
                   maxiter: int = 60) -> tuple[np.ndarray, int]:
    """Damped Newton for min 1/2 u^T A u - c^T u + weight * sum C_eps(u_i).

    C_eps is the smooth convex part of B_eps (Lipschitz derivative), so the
    Hessian A + weight * diag(C_eps'') is SPD and Armijo steps converge.
    """
    A = solver.A
    every = np.ones(c.size, dtype=bool)

    def q(x):
        return 0.5 * float(x @ (A @ x)) - float(c @ x) \
            + weight * float(np.sum(convex_primitive_eps(profile, eps, x)))

    Qu = q(u)
    for it in range(maxiter):
        grad = A @ u - c + weight * convex_slope_eps(profile, eps, u)
        gnorm = float(np.abs(grad).max(initial=0.0))
        if gnorm <= 1e-13 * max(1.0, float(np.abs(c).max(initial=0.0))):
            return u, it
        curv = weight * convex_curvature_eps(profile, eps, u)
        if not curv.any():
            step = solver.solve(every, -grad, None)
        else:
            H = (A + sp.diags(curv)).tocsr()
            step = _SubsystemSolver(H, solver.options).solve(every, -grad, None)
            solver.count += 1
        slope = float(grad @ step)
        t = 1.0
        while True:
            cand = u + t * step
            Qc = q(cand)
            if Qc <= Qu + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if not Qc < Qu:
            # q no longer resolves the decrease: take the full Newton step
            # while it still shrinks the gradient
            cand = u + step
            g2 = A @ cand - c + weight * convex_slope_eps(profile, eps, cand)
            if not float(np.abs(g2).max(initial=0.0)) < 0.5 * gnorm:
                return u, it
            Qc = q(cand)
        u, Qu = cand, Qc
    return u, maxiter


# --------------------------------------------------------------------------
# minimisation

@dataclass
class SolveReport:
    eps: float
    energies: list[float] = dc_field(default_factory=list)
    residuals: list[float] = dc_field(default_factory=list)
    line_search_steps: list[int] = dc_field(default_factory=list)
    linear_solves: int = 0
    final: EnergyBreakdown | None = None
    residual_scale: float = 1.0
    converged: bool = False
    min_value: float = 0.0
    sup_norm: float = 0.0
    start: str = ""
    polished: bool = False       # final step tied the energy within round-off

    @property
    def iterations(self) -> int:
        return len(self.energies)

    @property
    def energy_monotone(self) -> bool:
        # polishing steps may tie the previous energy up to round-off
        e = self.energies
        return all(b < a or b - a <= ROUNDOFF * max(1.0, abs(a)) for a, b in zip(e, e[1:]))

    def nonneg_ok(self, rel: float = 1e-10) -> bool:
        return self.min_value >= -rel * self.sup_norm

    def as_dict(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "start": self.start,
            "converged": self.converged,
            "polished": self.polished,
            "iterations": self.iterations,
            "linear_solves": self.linear_solves,
            "energies": self.energies,
            "residuals": self.residuals,
            "residual_scale": self.residual_scale,
            "line_search_steps": self.line_search_steps,
            "final": self.final.as_dict() if self.final else None,
            "min_value": self.min_value,
            "sup_norm": self.sup_norm,
        }


def _initial_guess(prob: _Problem, fld: CoefficientField, boundary: BoundaryData,
                   init, options: SolveOptions) -> tuple[np.ndarray, str]:
    if isinstance(init, GridFunction):
        if init.grid != fld.grid:
            raise GridMismatchError("initial guess lives on a different grid")
        return init.values.ravel()[prob.free].copy(), "warm"
    if isinstance(init, np.ndarray):
        return init.reshape(-1)[prob.free].astype(float), "warm"
    if init == "zero":
        return np.zeros(int(prob.free.sum())), "zero"
    if init == "harmonic":
        return solve_linear(fld, 0.0, boundary, options).values.ravel()[prob.free], "harmonic"
    raise ValueError(f"unknown initial guess {init!r}")


def _prolong(values: np.ndarray) -> np.ndarray:
    """Multilinear interpolation from a grid to its uniform refinement."""
    out = values
    for ax in range(values.ndim):
        n = out.shape[ax]
        shape = list(out.shape)
        shape[ax] = 2 * n - 1
        fine = np.empty(shape)
        even = [slice(None)] * out.ndim
        odd = [slice(None)] * out.ndim
        even[ax] = slice(0, None, 2)
        odd[ax] = slice(1, None, 2)
        fine[tuple(even)] = out
        fine[tuple(odd)] = 0.5 * (np.take(out, np.arange(n - 1), axis=ax)
                                  + np.take(out, np.arange(1, n), axis=ax))
        out = fine
    return out


def coarsen_field(fld: CoefficientField) -> CoefficientField:
    """Average each 2^n block of cells into one cell of the grid with spacing 2h."""
    g = fld.grid
    if (g.n - 1) % 2:
        raise ValueError("grid with an odd number of cells cannot be coarsened")
    cg = Grid(g.dim, (g.n - 1) // 2 + 1, g.length)

    def avg(a):
        if a is None:
            return None
        out = np.zeros(cg.cell_shape)
        for off in np.ndindex(*(2,) * g.dim):
            out += a[tuple(slice(o, None, 2) for o in off)]
        return out / 2 ** g.dim

    return CoefficientField(cg, avg(fld.a11), avg(fld.a12), avg(fld.a22), fld.lam, fld.Lam,
                            fld.kind, fld.seed, fld.params)


def _nested_guess(fld: CoefficientField, boundary: BoundaryData, profile: PerturbationProfile,
                  eps: float, options: SolveOptions, init: str) -> GridFunction | None:
    g = fld.grid
    if not options.nested or (g.n - 1) % 2 or (g.n - 1) // 2 < 32 or eps < 2 * g.h:
        return None
    cfld = coarsen_field(fld)
    sl = (slice(None, None, 2),) * g.dim
    cb = BoundaryData(cfld.grid, np.where(cfld.grid.boundary_mask, boundary.values[sl], 0.0),
                      boundary.trace, boundary.params)
    uc, _ = minimize_eps(cfld, cb, profile, eps, options, init=init)
    fine = _prolong(uc.values)
    return GridFunction(g, np.where(g.boundary_mask, boundary.values, fine))


def minimize_eps(fld: CoefficientField, boundary: BoundaryData, profile: PerturbationProfile,
                 eps: float, options: SolveOptions | None = None,
                 init="harmonic") -> tuple[GridFunction, SolveReport]:
    """Minimise F_eps over functions with trace phi; energy never increases.

    `init` is "harmonic", "zero" or a GridFunction warm start. Cold starts
    need eps >= h: thinner transition layers are reached by continuation.
    """
    options = options or SolveOptions()
    grid = fld.grid
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    cold = isinstance(init, str)
    if cold and eps < grid.h * (1 - 1e-12):
        raise SolverError(f"cold start at eps={eps} below h={grid.h}; use continuation")
    prob = _Problem.build(fld, boundary)
    hn = grid.cell_volume
    if cold and init in ("zero", "harmonic"):
        guess = _nested_guess(fld, boundary, profile, eps, options, init)
        if guess is not None:
            u, start = guess.values.ravel()[prob.free].copy(), init
        else:
            u, start = _initial_guess(prob, fld, boundary, init, options)
    else:
        u, start = _initial_guess(prob, fld, boundary, init, options)
    solver = _SubsystemSolver(prob.A, options)
    kappa = hn * kink_slope(profile, eps)
    report = SolveReport(eps=eps, start=start)

    def energy(x):
        return energy_eps(prob.assemble(x), fld, profile, eps)

    def resid(x):
        gf = prob.assemble(x)
        return float(np.abs(stationarity_residual(gf, fld, profile, eps).values).max())

    F = energy(u)
    lam = None
    steps = 0
    for _ in range(options.max_outer):
        rnorm = resid(u)
        scale = fld.Lam * max(np.abs(u).max(), np.abs(prob.phi).max()) / grid.h ** 2 \
            + profile.sup / eps
        report.energies.append(F.total)
        report.residuals.append(rnorm)
        report.line_search_steps.append(steps)
        report.residual_scale = scale
        if rnorm <= options.residual_tol * scale:
            report.converged = True
            break
        c = prob.b - hn * smooth_part_slope(profile, eps, u)
        if kappa > 0:
            target, state = _kink_qp(solver, c, kappa, u, lam, options.active_set_maxiter)
            # Newton step with the phase sets of the target frozen; its
            # matrix is usually the one the active-set loop just factored
            nz = target != 0
            if nz.any():
                trial = np.zeros_like(target)
                rhs = prob.b - hn * beta_eps(profile, eps, target)
                trial[nz] = solver.solve(nz, rhs[nz], None)
                # only when it beats both: a trial that merely beats a
                # stalled target would steer the line search off descent
                if energy(trial).total < min(energy(target).total, F.total):
                    target, state = trial, None
        else:
            target, _ = _convex_newton(solver, c, hn, profile, eps, u)
            state = None
        step, steps = 1.0, 0
        cand, Fc = target, energy(target)
        while not Fc.total < F.total:
            steps += 1
            if steps > options.max_backtracks:
                cand = None
                break
            step *= options.shrink
            cand = u + step * (target - u)
            Fc = energy(cand)
        if cand is None:
            # energy differences below round-off: the majorise-minimise
            # target still descends in exact arithmetic, so a tie is accepted
            Ft = energy(target)
            if Ft.total - F.total <= ROUNDOFF * max(1.0, abs(F.total)):
                u, F = target, Ft
                report.polished = True
                lam = None
                continue
            log.debug("eps=%g: line search stalled at residual %.3e", eps, rnorm)
            break
        lam = state if steps == 0 else None
        u, F = cand, Fc
    report.linear_solves = solver.count
    report.final = F
    report.min_value = float(u.min(initial=np.inf)) if u.size else 0.0
    report.min_value = min(report.min_value, float(prob.phi[~prob.free].min()))
    report.sup_norm = float(max(np.abs(u).max(initial=0.0), np.abs(prob.phi).max()))
    if not report.converged:
        log.warning("eps=%g: not converged after %d iterations (residual %.3e, scale %.3e)",
                    eps, report.iterations, report.residuals[-1], report.residual_scale)
    return prob.assemble(u), report


# --------------------------------------------------------------------------
# continuation

@dataclass(frozen=True)
class EpsilonLadder:
    eps0: float
    ratio: float = 0.5
    count: int = 1

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not 0 < self.ratio < 1:
            raise ValueError("ladder ratio must lie in (0, 1)")
        if self.count < 1:
            raise ValueError("ladder needs at least one rung")
        if self.values[-1] <= 10 * np.finfo(float).eps:
            raise ValueError("final rung is below the floating-point guard")

    @classmethod
    def from_range(cls, eps0: float, eps_final: float, ratio: float = 0.5) -> "EpsilonLadder":
        """Rungs eps0 * ratio^j, down to the last one not below eps_final."""
        if not 0 < eps_final <= eps0:
            raise ValueError("need 0 < eps_final <= eps0")
        count = int(math.floor(math.log(eps0 / eps_final) / math.log(1 / ratio) + 1e-9)) + 1
        return cls(eps0, ratio, count)

    @property
    def values(self) -> list[float]:
        return [self.eps0 * self.ratio ** j for j in range(self.count)]

    @property
    def final(self) -> float:
        return self.values[-1]

    def check_grid(self, grid: Grid) -> None:
        if self.eps0 < grid.h * (1 - 1e-12):
            raise ValueError(f"first rung eps0={self.eps0} is below h={grid.h}")


class ContinuationError(SolverError):
    def __init__(self, msg: str, partial: "ContinuationResult"):
        super().__init__(msg)
        self.partial = partial


@dataclass
class ContinuationResult:
    rungs: list[GridFunction]
    reports: list[SolveReport]
    eps: list[float]
    sup_diffs: list[float] = dc_field(default_factory=list)
    sharp_energies: list[float] = dc_field(default_factory=list)
    holder_alpha: float = float("nan")
    holder_moduli: list[float] = dc_field(default_factory=list)
    starts: dict[str, float] = dc_field(default_factory=dict)

    @property
    def u0(self) -> GridFunction:
        return self.rungs[-1]

    @property
    def converged(self) -> bool:
        return bool(self.reports) and all(r.converged for r in self.reports)

    @property
    def sharpening_ok(self) -> bool:
        e = self.sharp_energies
        return bool(e) and all(e[-1] <= x + 1e-12 * abs(x) for x in e)

    @property
    def holder_bounded(self) -> bool:
        m = [x for x in self.holder_moduli if np.isfinite(x) and x > 0]
        return bool(m) and max(m) <= 2 * min(m)

    def as_dict(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "converged": self.converged,
            "sup_diffs": self.sup_diffs,
            "sharp_energies": self.sharp_energies,
            "sharpening_ok": self.sharpening_ok,
            "holder_alpha": self.holder_alpha,
            "holder_moduli": self.holder_moduli,
            "holder_bounded": self.holder_bounded,
            "starts": self.starts,
            "reports": [r.as_dict() for r in self.reports],
        }


def reprofile_layer(values: np.ndarray, eps_prev: float, eps: float,
                    slope: np.ndarray | float = 0.0, offset: float = 0.0) -> np.ndarray:
    """Predict the eps-minimiser from the eps_prev one (indicator profile).

    Across a flat interface the indicator layer, in the coordinate t normal
    to it (scaled by sqrt(a)) and with q the normalised slope of the
    negative phase, is

        u = q t                    for t < 0
        u = q t + t^2 / (2 eps)    for 0 <= t <= eps (p - q)
        u = eps + p (t - eps (p - q))  beyond,      p = sqrt(q^2 + 2).

    The outer part does not depend on eps, so the layer moves by
    (eps_prev - eps) (p - q - 1/p) when eps shrinks. Inverting the old layer,
    shifting and applying the new one moves the interface instead of leaving
    it pinned at its old position. q = 0 is the one-phase case, where the map
    is u -> T_eps(T_eps_prev^-1(u)) with T_eps(s) = (s + eps)^2 / (4 eps).
    `offset` moves the interface further into the positive phase.
    """
    v = np.asarray(values, dtype=float)
    q = np.broadcast_to(np.asarray(slope, dtype=float), v.shape)
    p = np.sqrt(q * q + 2.0)
    shift = (eps_prev - eps) * (p - q - 1.0 / p) + offset
    # position of each node relative to the old interface
    t_layer = eps_prev * (np.sqrt(q * q + 2.0 * np.clip(v, 0.0, eps_prev) / eps_prev) - q)
    t = t_layer - shift
    t_top = eps * (p - q)
    new = np.where(t < 0, q * t, np.where(t <= t_top, q * t + t * t / (2.0 * eps),
                                          eps + p * (t - t_top)))
    out = np.where(v >= eps_prev, v, new)
    # negative phase: shift near the interface, taper off over a few layer widths
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(q > 0, np.clip(1.0 + v / (4.0 * eps_prev * q), 0.0, 1.0), 0.0)
    return np.where(v < 0, v - q * shift * weight, out)


def negative_slope(u: GridFunction, fld: CoefficientField) -> np.ndarray:
    """Normalised slope sqrt(a) |grad u| of the negative phase next to the interface.

    Measured on negative nodes whose stencil is negative and that lie within
    two nodes of the nonnegative set, then extended to every node by nearest
    neighbour. Zero where there is no negative phase.
    """
    g = u.grid
    v = u.values
    neg = v < 0
    if not neg.any() or neg.all():
        return np.zeros(g.shape)
    grads = np.gradient(v, g.h) if g.dim > 1 else [np.gradient(v, g.h)]
    gnorm = np.sqrt(sum(gr ** 2 for gr in grads))
    inner = ndimage.binary_erosion(neg, border_value=0)
    near = ndimage.distance_transform_edt(v < 0) <= 3
    probe = inner & near & ~g.boundary_mask
    if not probe.any():
        return np.zeros(g.shape)
    diag = fld.node_diagonal()
    q = gnorm * np.sqrt(sum(diag) / len(diag))
    _, idx = ndimage.distance_transform_edt(~probe, return_indices=True)
    return q[tuple(idx)]


def positivity_threshold(u: GridFunction) -> float:
    return max(1e-12 * u.sup_norm(), 0.0)


def _interface_search(fld: CoefficientField, boundary: BoundaryData, profile: PerturbationProfile,
                      eps: float, options: SolveOptions, u: GridFunction,
                      rep: SolveReport) -> tuple[GridFunction, SolveReport]:
    """Descend over minimisers with the interface shifted by multiples of h/2.

    Nearby interface positions are separate discrete local minima whose
    energies differ little; shifting the layer along its normal and
    re-minimising walks to the lowest one.
    """
    g = fld.grid
    step = 0.5 * g.h
    for direction in (1.0, -1.0):
        moved = False
        for _ in range(options.interface_search):
            v = reprofile_layer(u.values, eps, eps, negative_slope(u, fld), direction * step)
            trial = GridFunction(g, np.where(g.boundary_mask, u.values, v))
            ut, rt = minimize_eps(fld, boundary, profile, eps, options, init=trial)
            if not (rt.converged and rt.final.total < rep.final.total):
                break
            u, rep, moved = ut, rt, True
        if moved:
            break
    return u, rep


def continuation(fld: CoefficientField, boundary: BoundaryData, profile: PerturbationProfile,
                 ladder: EpsilonLadder, options: SolveOptions | None = None,
                 init="multistart") -> ContinuationResult:
    """Warm-started eps-ladder; the last rung is taken as the sharp minimiser u0.

    Rungs after the first start from the previous minimiser, with its
    transition layer re-profiled to the new eps for kinked profiles
    (see reprofile_layer).

    With init="multistart" the first rung is solved from both the harmonic
    extension of phi and the zero extension; the lower-energy minimiser
    seeds the ladder. A GridFunction init warm-starts the first rung.
    """
    options = options or SolveOptions()
    if not isinstance(init, GridFunction):
        ladder.check_grid(fld.grid)
    res = ContinuationResult([], [], [])
    for j, eps in enumerate(ladder.values):
        if j == 0 and init == "multistart":
            best = None
            for start in ("zero", "harmonic"):
                u, rep = minimize_eps(fld, boundary, profile, eps, options, init=start)
                res.starts[start] = rep.final.total
                if rep.converged and (best is None or rep.final.total < best[1].final.total):
                    best = (u, rep)
            if best is None:
                best = (u, rep)
            u, rep = best
        elif j == 0:
            u, rep = minimize_eps(fld, boundary, profile, eps, options, init=init)
        else:
            prev = res.rungs[-1]
            warm = prev
            if profile.jump0 > 0:
                vals = reprofile_layer(prev.values, res.eps[-1], eps, negative_slope(prev, fld))
                warm = GridFunction(prev.grid, np.where(prev.grid.boundary_mask, prev.values, vals))
            u, rep = minimize_eps(fld, boundary, profile, eps, options, init=warm)
        if rep.converged and options.interface_search and profile.jump0 > 0:
            u, rep = _interface_search(fld, boundary, profile, eps, options, u, rep)
        if res.rungs:
            res.sup_diffs.append(float(np.abs(u.values - res.rungs[-1].values).max()))
        res.rungs.append(u)
        res.reports.append(rep)
        res.eps.append(eps)
        if not rep.converged:
            raise ContinuationError(f"rung {j} (eps={eps:g}) did not converge", res)
    tau = positivity_threshold(res.u0)
    res.sharp_energies = [energy_ac(u, fld, tau).total for u in res.rungs]
    alpha, _ = holder_modulus(res.u0)
    res.holder_alpha = alpha
    res.holder_moduli = [holder_modulus(u, alpha)[1] for u in res.rungs]
    return res


def holder_modulus(u: GridFunction, alpha: float | None = None,
                   inset: float = 0.125) -> tuple[float, float]:
    """Dyadic Hoelder surrogate on the inset box.

    osc(s) = max |u(X + s e_i) - u(X)| over axis pairs at dyadic offsets s;
    alpha (if not given) is the least-squares slope of log osc vs log s,
    clipped to (0, 1]. Returns (alpha, max_s osc(s) / s^alpha).
    """
    g = u.grid
    lo = int(math.ceil(inset * g.length / g.h - 1e-9))
    hi = g.n - lo
    core = u.values[(slice(lo, hi),) * g.dim]
    m = core.shape[0]
    shifts, oscs = [], []
    s = 1
    while s <= max(1, m // 4):
        osc = 0.0
        for ax in range(g.dim):
            d = np.abs(np.diff(core, n=1, axis=ax) if s == 1 else
                       np.take(core, np.arange(s, m), axis=ax) - np.take(core, np.arange(m - s), axis=ax))
            osc = max(osc, float(d.max(initial=0.0)))
        shifts.append(s * g.h)
        oscs.append(osc)
        s *= 2
    shifts, oscs = np.asarray(shifts), np.asarray(oscs)
    ok = oscs > 0
    if alpha is None:
        if ok.sum() >= 2:
            alpha = float(np.clip(np.polyfit(np.log(shifts[ok]), np.log(oscs[ok]), 1)[0], 1e-3, 1.0))
        else:
            alpha = 1.0
    if not ok.any():
        return alpha, 0.0
    return alpha, float(np.max(oscs[ok] / shifts[ok] ** alpha))


# --------------------------------------------------------------------------
# zoom

def rescale_solution(u: GridFunction, fld: CoefficientField, delta_bar: float,
                     origin: Sequence[float] | None = None
                     ) -> tuple[GridFunction, CoefficientField, dict[str, Any]]:
    """Zoom u(X) -> u(origin + sqrt(delta_bar) X) on a grid of the same resolution.

    The zoomed pair solves div(a~ grad u~) = delta_bar * beta_eps(u~) when u
    solves the unscaled equation; the returned metadata carries delta_bar
    so downstream residual checks can scale the potential.
    """
    if u.grid != fld.grid:
        raise GridMismatchError("solution and field grids differ")
    if not 0 < delta_bar <= 1:
        raise ValueError("delta_bar must lie in (0, 1]")
    g = u.grid
    origin = np.zeros(g.dim) if origin is None else np.asarray(origin, dtype=float)
    s = math.sqrt(delta_bar)
    if np.any(origin < -1e-12) or np.any(origin + s * g.length > g.length * (1 + 1e-12)):
        raise ValueError("zoom window leaves the domain")
    X = g.coords()
    pts = np.stack([np.clip(origin[k] + s * X[k], 0.0, g.length) for k in range(g.dim)], axis=-1)
    interp = RegularGridInterpolator((g.axis,) * g.dim, u.values, method="linear")
    vals = interp(pts.reshape(-1, g.dim)).reshape(g.shape)
    C = g.cell_centers()
    cidx = tuple(np.clip(np.floor((origin[k] + s * C[k]) / g.h).astype(np.int64), 0, g.n - 2)
                 for k in range(g.dim))
    pick = lambda a: None if a is None else np.ascontiguousarray(a[cidx])
    zf = CoefficientField(g, pick(fld.a11), pick(fld.a12), pick(fld.a22), fld.lam, fld.Lam,
                          fld.kind, fld.seed, {**dict(fld.params), "zoom": s})
    meta = {"delta_bar": float(delta_bar), "factor": s, "origin": origin.tolist()}
    return GridFunction(g, vals), zf, meta
