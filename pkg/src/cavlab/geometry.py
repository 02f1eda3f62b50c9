"""Free-boundary extraction and geometric-measure diagnostics.

Balls are node sets {X : |X - center| <= r}; their measure is the node
count times h^n. Fits are ordinary least squares over dyadic radii and
need at least four octaves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .energy import GridFunction, positivity_cells
from .field import CoefficientField, Grid

MIN_OCTAVES = 4


class GeometryError(ValueError):
    pass


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def positivity_threshold(u: GridFunction, eps: float | None = None) -> float:
    """tau = eps for eps-solutions, max(1e-12 |u|_inf, 0) for the limit."""
    if eps is not None:
        return float(eps)
    return max(1e-12 * u.sup_norm(), 0.0)


# --------------------------------------------------------------------------
# sets

def positivity_set(u: GridFunction, tau: float = 0.0) -> np.ndarray:
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return positivity_cells(u.values, tau)


@dataclass(frozen=True, eq=False)
class FreeBoundarySet:
    grid: Grid
    cells: np.ndarray   # (k, dim) cell indices, row-major order
    tau: float

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def empty(self) -> bool:
        return len(self.cells) == 0

    def centers(self) -> np.ndarray:
        return (self.cells + 0.5) * self.grid.h

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.cell_shape, dtype=bool)
        if len(self.cells):
            m[tuple(self.cells.T)] = True
        return m


def _corner_stack(values: np.ndarray) -> list[np.ndarray]:
    if values.ndim == 1:
        return [values[:-1], values[1:]]
    return [values[:-1, :-1], values[1:, :-1], values[:-1, 1:], values[1:, 1:]]


def free_boundary(u: GridFunction, tau: float = 0.0) -> FreeBoundarySet:
    """Cells with a corner node > tau and a corner node <= tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    corners = _corner_stack(u.values)
    above = np.zeros(u.grid.cell_shape, dtype=bool)
    below = np.zeros(u.grid.cell_shape, dtype=bool)
    for c in corners:
        above |= c > tau
        below |= c <= tau
    mixed = above & below
    cells = np.argwhere(mixed)
    fb = FreeBoundarySet(u.grid, cells, float(tau))
    for c in cells:
        vals = [corner[tuple(c)] for corner in corners]
        assert max(vals) > tau >= min(vals), "free-boundary cell does not touch both phases"
    return fb


def level_crossings(u: GridFunction, level: float) -> np.ndarray:
    """Points where the piecewise-linear interpolant along grid edges equals `level`.

    Nodes with u == level exactly are included; edges crossing strictly
    contribute their linearly interpolated point.
    """
    g = u.grid
    v = u.values
    X = np.stack(g.coords(), axis=-1)
    pts = [X[v == level]]
    for ax in range(g.dim):
        a = np.take(v, np.arange(g.n - 1), axis=ax)
        b = np.take(v, np.arange(1, g.n), axis=ax)
        cross = (a - level) * (b - level) < 0
        if not cross.any():
            continue
        t = (level - a[cross]) / (b[cross] - a[cross])
        base = np.take(X, np.arange(g.n - 1), axis=ax)[cross]
        base[:, ax] += t * g.h
        pts.append(base)
    return np.concatenate(pts, axis=0) if pts else np.zeros((0, g.dim))


def sharp_interface_points(u: GridFunction, level: float) -> np.ndarray:
    """Free-boundary estimate from the linear part of an eps-solution.

    Takes the crossings of {u = level} and steps back by level / |grad u|
    along the gradient direction (gradient by centered differences at the
    upper node of each crossing edge). For level = 0 this is level_crossings.
    """
    pts = level_crossings(u, level)
    if level == 0 or len(pts) == 0:
        return pts
    g = u.grid
    grads = np.stack(np.gradient(u.values, g.h), axis=-1) if g.dim > 1 \
        else np.gradient(u.values, g.h)[:, None]
    lo = np.clip(np.floor(pts / g.h + 1e-9).astype(np.int64), 0, g.n - 1)
    hi = np.clip(np.ceil(pts / g.h - 1e-9).astype(np.int64), 0, g.n - 1)
    out = []
    for p, a, b in zip(pts, lo, hi):
        node = tuple(b) if u.values[tuple(b)] >= u.values[tuple(a)] else tuple(a)
        gvec = grads[node]
        gn = float(np.linalg.norm(gvec))
        if gn == 0:
            continue
        out.append(p - level * gvec / gn ** 2)
    return np.asarray(out).reshape(-1, g.dim)


# --------------------------------------------------------------------------
# balls

def _ball(grid: Grid, center, r: float, clip: bool = False) -> tuple[tuple[slice, ...], np.ndarray]:
    """Index window and node mask of the closed ball B_r(center)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if center.shape != (grid.dim,):
        raise GeometryError(f"center {center} does not match dim {grid.dim}")
    if r <= 0:
        raise GeometryError("radius must be positive")
    tol = 1e-9 * grid.h
    if not clip and (np.any(center - r < -tol) or np.any(center + r > grid.length + tol)):
        raise GeometryError(f"ball of radius {r:g} at {center.tolist()} leaves the domain")
    lo = np.maximum(np.ceil((center - r) / grid.h - 1e-9).astype(int), 0)
    hi = np.minimum(np.floor((center + r) / grid.h + 1e-9).astype(int), grid.n - 1)
    window = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    axes = [np.arange(a, b + 1) * grid.h - c for a, b, c in zip(lo, hi, center)]
    mesh = np.meshgrid(*axes, indexing="ij")
    mask = sum(m ** 2 for m in mesh) <= r * r * (1 + 1e-12)
    return window, mask


def ball_values(u: GridFunction, center, r: float, clip: bool = False) -> np.ndarray:
    window, mask = _ball(u.grid, center, r, clip)
    return u.values[window][mask]


def sup_ball(u: GridFunction, center, r: float, clip: bool = False) -> float:
    vals = ball_values(u, center, r, clip)
    if vals.size == 0:
        raise GeometryError("ball contains no grid nodes")
    return float(vals.max())


def dyadic_radii(r_min: float, r_max: float) -> np.ndarray:
    k = int(math.floor(math.log2(r_max / r_min) + 1e-9))
    return r_min * 2.0 ** np.arange(k + 1)


def _fit_loglog(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS of log y on log x: (slope, intercept, rms residual)."""
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class GrowthFit:
    center: tuple[float, ...]
    radii: np.ndarray
    sups: np.ndarray
    exponent: float
    c_minus: float
    c_plus: float
    residual: float

    def as_row(self) -> dict[str, Any]:
        return {**{f"x{i + 1}": c for i, c in enumerate(self.center)},
                "exponent": self.exponent, "c_minus": self.c_minus,
                "c_plus": self.c_plus, "fit_residual": self.residual}


def growth_exponent(u: GridFunction, center, r_min: float, r_max: float,
                    tau: float = 0.0) -> GrowthFit:
    """Fit S(r) = sup_{B_r(center)} (u - tau) ~ C r^exponent over dyadic radii.

    tau is the positivity threshold: an eps-solution is measured from its
    eps-level set, where it behaves like the limit measured from zero.
    """
    g = u.grid
    if r_min < 4 * g.h * (1 - 1e-9):
        raise GeometryError(f"r_min={r_min:g} is below 4h={4 * g.h:g}")
    radii = dyadic_radii(r_min, r_max)
    if len(radii) - 1 < MIN_OCTAVES:
        raise GeometryError(f"{len(radii) - 1} octaves between {r_min:g} and {r_max:g}; "
                            f"need at least {MIN_OCTAVES}")
    sups = np.array([sup_ball(u, center, r) - tau for r in radii])
    assert np.all(np.diff(sups) >= 0), "sup over nested balls must be nondecreasing"
    if np.any(sups <= 0):
        raise GeometryError("u vanishes on a ball around the point; not a free-boundary point")
    slope, _, resid = _fit_loglog(radii, sups)
    ratio = sups / radii
    return GrowthFit(tuple(float(c) for c in np.atleast_1d(center)), radii, sups, slope,
                     float(ratio.min()), float(ratio.max()), resid)


# --------------------------------------------------------------------------
# growth, nondegeneracy, density, porosity

@dataclass
class LinearGrowth:
    c: float
    ratios: np.ndarray
    points: np.ndarray
    skipped: int
    floor: float | None = None

    @property
    def flagged(self) -> bool:
        return self.floor is not None and np.isfinite(self.c) and self.c < self.floor


def interior_mask(grid: Grid, inset: float) -> np.ndarray:
    X = grid.coords()
    m = np.ones(grid.shape, dtype=bool)
    for x in X:
        m &= (x >= inset - 1e-12) & (x <= grid.length - inset + 1e-12)
    return m


def linear_growth_check(u: GridFunction, eps: float, samples: np.ndarray | None = None,
                        inset: float = 0.125, floor: float | None = None) -> LinearGrowth:
    """min over samples X0 in {u >= eps} of u(X0) / dist(X0, {u = eps}).

    The eps-level set is the set of edge crossings plus nodes equal to eps;
    distances come from a k-d tree. Samples at distance 0 are skipped.
    `samples` are node multi-indices; default: all nodes of {u >= eps}
    inside the inset box.
    """
    g = u.grid
    v = u.values
    if samples is None:
        sel = (v >= eps) & interior_mask(g, inset)
        samples = np.argwhere(sel)
    samples = np.asarray(samples, dtype=np.int64).reshape(-1, g.dim)
    if not np.any(v >= eps):
        raise GeometryError(f"the set {{u >= {eps:g}}} is empty")
    level = level_crossings(u, eps)
    if len(level) == 0:
        return LinearGrowth(float("nan"), np.zeros(0), np.zeros((0, g.dim)), len(samples), floor)
    tree = cKDTree(level)
    pts = samples * g.h
    dist, _ = tree.query(pts)
    vals = v[tuple(samples.T)]
    keep = dist > 1e-12 * g.h
    ratios = vals[keep] / dist[keep]
    c = float(ratios.min()) if ratios.size else float("nan")
    return LinearGrowth(c, ratios, pts[keep], int((~keep).sum()), floor)


def _near_positive(u: GridFunction, point, tau: float) -> bool:
    vals = ball_values(u, point, u.grid.h * math.sqrt(u.grid.dim) * (1 + 1e-9), clip=True)
    return bool(np.any(vals > tau))


def nondegeneracy(u: GridFunction, point, radii: Sequence[float], tau: float = 0.0) -> float:
    """min over radii of sup_{B_r(point)} (u - tau) / r."""
    if not _near_positive(u, point, tau):
        raise GeometryError("point is not in the closure of the positivity set")
    return float(min((sup_ball(u, point, r) - tau) / r for r in radii))


def _check_radius(grid: Grid, r: float) -> None:
    if r < 8 * grid.h * (1 - 1e-9):
        raise GeometryError(f"radius {r:g} is below 8h={8 * grid.h:g}")


def density_ratio(u: GridFunction, point, r: float, tau: float = 0.0) -> float:
    """|{u > tau} cap B_r| / (omega_n r^n) with the node-count measure."""
    g = u.grid
    _check_radius(g, r)
    vals = ball_values(u, point, r)
    return float(np.count_nonzero(vals > tau) * g.cell_volume / (unit_ball_volume(g.dim) * r ** g.dim))


@dataclass
class Porosity:
    mu: float
    center: tuple[float, ...]
    dimension_bound: float    # n - mu^n, with the unknown constant set to 1


def porosity(u: GridFunction, point, r: float, tau: float = 0.0) -> Porosity:
    """Largest mu such that a ball B_{mu r}(xi) sits inside {u > tau} cap B_r(point).

    Uses the Euclidean distance transform of the positivity mask on the
    window of B_r; the inradius at xi is min(edt(xi), r - |xi - point|).
    """
    g = u.grid
    _check_radius(g, r)
    window, mask = _ball(g, point, r)
    pos = u.values[window] > tau
    # distance to the nearest node outside {u > tau}; pad so the window edge
    # does not count as an obstacle (the ball constraint handles it)
    pad = np.pad(pos, 1, mode="edge")
    edt = ndimage.distance_transform_edt(pad)[(slice(1, -1),) * g.dim] * g.h
    center = np.atleast_1d(np.asarray(point, dtype=float))
    lo = np.array([s.start for s in window])
    axes = [(np.arange(s.stop - s.start) + a) * g.h - c for s, a, c in zip(window, lo, center)]
    mesh = np.meshgrid(*axes, indexing="ij")
    rad = np.sqrt(sum(m ** 2 for m in mesh))
    inr = np.where(pos & mask, np.minimum(edt, r - rad), 0.0)
    k = int(np.argmax(inr))
    mu = float(inr.ravel()[k] / r)
    xi = tuple(float((np.unravel_index(k, inr.shape)[i] + lo[i]) * g.h) for i in range(g.dim))
    return Porosity(mu, xi, g.dim - mu ** g.dim)


# --------------------------------------------------------------------------
# box counting

@dataclass
class BoxDimension:
    estimate: float
    box_sizes: np.ndarray
    counts: np.ndarray
    residual: float
    dim: int

    @property
    def varsigma(self) -> float:
        return self.dim - self.estimate


def box_dimension(fb: FreeBoundarySet, min_cells: int = 4, max_size: float | None = None) -> BoxDimension:
    """Box-counting slope of the FB cell set over dyadic boxes.

    Box sides run from min_cells cells up to max_size (default: 1/8 of the
    domain); N(delta) counts boxes containing an FB cell and the estimate
    is the least-squares slope of log N against log(1/delta).
    """
    g = fb.grid
    if fb.empty:
        raise GeometryError("empty free boundary")
    max_size = g.length / 8 if max_size is None else max_size
    ncell = g.n - 1
    sizes, counts = [], []
    k = min_cells
    while k * g.h <= max_size * (1 + 1e-12) and k <= ncell:
        boxes = {tuple(c) for c in (fb.cells // k)}
        sizes.append(k * g.h)
        counts.append(len(boxes))
        k *= 2
    if len(sizes) - 1 < MIN_OCTAVES:
        raise GeometryError(f"only {len(sizes) - 1} octaves of box sizes; need {MIN_OCTAVES}")
    sizes, counts = np.asarray(sizes), np.asarray(counts, dtype=float)
    slope, _, resid = _fit_loglog(1.0 / sizes, counts)
    return BoxDimension(slope, sizes, counts, resid, g.dim)


# --------------------------------------------------------------------------
# strips

def _nodal_gradient(u: GridFunction) -> np.ndarray:
    g = u.grid
    if g.dim == 1:
        return np.gradient(u.values, g.h)[None]
    return np.stack(np.gradient(u.values, g.h), axis=0)


@dataclass
class StripResult:
    mu: float
    measure: float
    measure_ratio: float
    dirichlet: float | None = None
    dirichlet_ratio: float | None = None


def _local_slope(u: GridFunction, point, r: float, tau: float = 0.0) -> float:
    return (sup_ball(u, point, r) - tau) / r


def _check_strip(u: GridFunction, point, r: float, mu: float, tau: float = 0.0) -> None:
    slope = _local_slope(u, point, r, tau)
    if mu < 5 * slope * u.grid.h * (1 - 1e-9):
        raise GeometryError(f"strip width {mu:g} is below 5 * slope * h = {5 * slope * u.grid.h:g}")


def strip_measure(u: GridFunction, point, r: float, mu: float, tau: float = 0.0) -> StripResult:
    """|{tau < u < tau + mu} cap B_r| and its ratio to mu r^(n-1)."""
    _check_strip(u, point, r, mu, tau)
    g = u.grid
    vals = ball_values(u, point, r)
    meas = float(np.count_nonzero((vals > tau) & (vals < tau + mu)) * g.cell_volume)
    return StripResult(mu, meas, meas / (mu * r ** (g.dim - 1)))


def strip_dirichlet(u: GridFunction, fld: CoefficientField | None, point, r: float, mu: float,
                    tau: float = 0.0) -> StripResult:
    """Also integrates |grad u|^2 over the strip (centered nodal gradients)."""
    res = strip_measure(u, point, r, mu, tau)
    g = u.grid
    window, mask = _ball(g, point, r)
    grad2 = np.sum(_nodal_gradient(u)[(slice(None),) + window] ** 2, axis=0)
    vals = u.values[window]
    sel = mask & (vals > tau) & (vals < tau + mu)
    dirichlet = float(grad2[sel].sum() * g.cell_volume)
    res.dirichlet = dirichlet
    res.dirichlet_ratio = dirichlet / (mu * r ** (g.dim - 1))
    return res


def strip_schedule(u: GridFunction, point, r: float, mu0: float, halvings: int = 3,
                   tau: float = 0.0) -> list[StripResult]:
    return [strip_dirichlet(u, None, point, r, mu0 / 2 ** k, tau) for k in range(halvings + 1)]


def drift(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min()) if v.size and v.min() > 0 else float("inf")


# --------------------------------------------------------------------------
# dyadic decay and free-boundary slope

@dataclass
class DyadicDecay:
    max_k: int             # largest K with the bound for all k <= K; -1 if k = 0 fails
    resolvable: int        # number of k with sqrt(delta*)/2^k >= 4h
    constant: float        # 2 / sqrt(delta*)
    first_failure: int | None
    sups: list[float] = dc_field(default_factory=list)

    @property
    def all_verified(self) -> bool:
        return self.first_failure is None


def dyadic_decay(u: GridFunction, xi, delta_star: float, tau: float = 0.0,
                 norm_radius: float = 1.0) -> DyadicDecay:
    """Check sup_{B_{sqrt(delta*)/2^k}(xi)} u <= 2^-k for every resolvable k."""
    g = u.grid
    if not 0 < delta_star <= 1:
        raise GeometryError("delta_star must lie in (0, 1]")
    near = ball_values(u, xi, g.h * math.sqrt(g.dim) * (1 + 1e-9), clip=True)
    if not np.any(near <= tau):
        raise GeometryError("xi is not on the free boundary")
    ref = ball_values(u, xi, norm_radius, clip=True)
    if np.abs(ref).max() > 1 + 1e-12:
        raise GeometryError("u must be normalised to |u| <= 1 on the reference ball; rescale first")
    root = math.sqrt(delta_star)
    sups, first_fail, k = [], None, 0
    while root / 2 ** k >= 4 * g.h * (1 - 1e-9):
        s = sup_ball(u, xi, root / 2 ** k)
        sups.append(s)
        if first_fail is None and s > 2.0 ** -k * (1 + 1e-12):
            first_fail = k
        k += 1
    max_k = (k - 1) if first_fail is None else first_fail - 1
    return DyadicDecay(max_k, k, 2.0 / root, first_fail, sups)


@dataclass
class FBSlope:
    node: tuple[int, ...]
    gradient: np.ndarray
    slope: float
    flux: float
    a_value: np.ndarray


def _node_tensor(fld: CoefficientField, node: tuple[int, ...]) -> np.ndarray:
    """Average of the coefficient matrices of the cells around a node."""
    g = fld.grid
    cells = []
    for off in np.ndindex(*(2,) * g.dim):
        c = tuple(i - 1 + o for i, o in zip(node, off))
        if all(0 <= ci < g.n - 1 for ci in c):
            cells.append(c)
    if g.dim == 1:
        return np.array([[np.mean([fld.a11[c] for c in cells])]])
    a11 = np.mean([fld.a11[c] for c in cells])
    a12 = np.mean([fld.a12[c] for c in cells]) if fld.a12 is not None else 0.0
    a22 = np.mean([fld.a22[c] for c in cells])
    return np.array([[a11, a12], [a12, a22]])


def fb_slope(u: GridFunction, fld: CoefficientField, point, tau: float = 0.0,
             layer: float | None = None) -> FBSlope:
    """Gradient and flux form <a grad u, grad u> just inside {u > tau} near `point`.

    Samples the node closest to `point` whose whole centered stencil lies in
    {u > layer} (layer defaults to tau, use eps to skip an eps transition
    layer); the gradient there is the centered difference.
    """
    g = u.grid
    layer = tau if layer is None else layer
    v = u.values
    ok = v > layer
    for ax in range(g.dim):
        ok &= np.roll(v, 1, axis=ax) > layer
        ok &= np.roll(v, -1, axis=ax) > layer
    ok &= ~g.boundary_mask
    cand = np.argwhere(ok)
    if len(cand) == 0:
        raise GeometryError("no interior node with a positive stencil")
    p = np.atleast_1d(np.asarray(point, dtype=float))
    node = tuple(int(i) for i in cand[np.argmin(np.sum((cand * g.h - p) ** 2, axis=1))])
    grad = np.array([(v[tuple(i + (1 if k == ax else 0) for k, i in enumerate(node))]
                      - v[tuple(i - (1 if k == ax else 0) for k, i in enumerate(node))]) / (2 * g.h)
                     for ax in range(g.dim)])
    a = _node_tensor(fld, node)
    return FBSlope(node, grad, float(np.linalg.norm(grad)), float(grad @ a @ grad), a)


# --------------------------------------------------------------------------
# aggregate report

@dataclass
class GeometryReport:
    tau: float
    fb_size: int
    growth: list[GrowthFit] = dc_field(default_factory=list)
    density: list[dict[str, float]] = dc_field(default_factory=list)
    porosity: list[dict[str, float]] = dc_field(default_factory=list)
    strips: list[dict[str, float]] = dc_field(default_factory=list)
    nondegeneracy: list[dict[str, float]] = dc_field(default_factory=list)
    box: BoxDimension | None = None
    notes: list[str] = dc_field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        if self.fb_size == 0:
            return {"free_boundary": "no free boundary", "tau": self.tau}
        out: dict[str, Any] = {"tau": self.tau, "fb_cells": self.fb_size,
                               "points": len(self.growth)}
        if self.growth:
            ex = [f.exponent for f in self.growth]
            out.update(exponent_min=min(ex), exponent_max=max(ex),
                       c_minus_min=min(f.c_minus for f in self.growth),
                       c_plus_max=max(f.c_plus for f in self.growth))
        if self.density:
            out["density_theta_min"] = min(d["theta"] for d in self.density)
        if self.porosity:
            out["porosity_mu_min"] = min(d["mu"] for d in self.porosity)
        if self.nondegeneracy:
            out["nondegeneracy_c_min"] = min(d["c"] for d in self.nondegeneracy)
        if self.strips:
            out["strip_measure_drift_max"] = max(d["measure_drift"] for d in self.strips)
            out["strip_dirichlet_drift_max"] = max(d["dirichlet_drift"] for d in self.strips)
        if self.box is not None:
            out["box_dimension"] = self.box.estimate
            out["varsigma_est"] = self.box.varsigma
            out["box_fit_residual"] = self.box.residual
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def analysis_points(fb: FreeBoundarySet, r_max: float, max_points: int | None = None) -> np.ndarray:
    """FB cell centers whose ball of radius r_max lies in the domain, thinned evenly."""
    g = fb.grid
    if fb.empty:
        return np.zeros((0, g.dim))
    c = fb.centers()
    inside = np.all((c - r_max >= -1e-12) & (c + r_max <= g.length + 1e-12), axis=1)
    c = c[inside]
    if max_points is not None and len(c) > max_points:
        idx = np.linspace(0, len(c) - 1, max_points).round().astype(int)
        c = c[np.unique(idx)]
    return c


def analyze_solution(u: GridFunction, fld: CoefficientField, tau: float | None = None,
                     r_min: float | None = None, r_max: float = 0.125,
                     density_radii: Sequence[float] | None = None,
                     strip_radius: float | None = None, strip_mu0: float | None = None,
                     strip_halvings: int = 3, max_points: int | None = 200) -> GeometryReport:
    """Run the free-boundary diagnostics at every (thinned) FB point."""
    g = u.grid
    tau = positivity_threshold(u) if tau is None else tau
    fb = free_boundary(u, tau)
    rep = GeometryReport(tau, len(fb))
    if fb.empty:
        return rep
    r_min = 4 * g.h if r_min is None else r_min
    pts = analysis_points(fb, r_max, max_points)
    if len(pts) == 0:
        rep.notes.append(f"no free-boundary point at distance >= {r_max:g} from the boundary")
    radii = list(density_radii) if density_radii else [r for r in dyadic_radii(8 * g.h, r_max)]
    skipped: dict[str, int] = {}
    for p in pts:
        try:
            rep.growth.append(growth_exponent(u, p, r_min, r_max, tau))
        except GeometryError as exc:
            skipped[f"growth fit skipped: {exc}"] = skipped.get(f"growth fit skipped: {exc}", 0) + 1
        row_c = {f"x{i + 1}": float(x) for i, x in enumerate(p)}
        rep.nondegeneracy.append({**row_c, "c": nondegeneracy(u, p, radii, tau)})
        for r in radii:
            theta = density_ratio(u, p, r, tau)
            por = porosity(u, p, r, tau)
            rep.density.append({**row_c, "r": float(r), "theta": theta})
            rep.porosity.append({**row_c, "r": float(r), "mu": por.mu,
                                 "dimension_bound": por.dimension_bound,
                                 "density_lower_bound": por.mu ** g.dim})
        if strip_radius is not None:
            mu0 = strip_mu0 if strip_mu0 is not None else 5 * 8 * _local_slope(u, p, strip_radius, tau) * g.h
            try:
                sched = strip_schedule(u, p, strip_radius, mu0, strip_halvings, tau)
            except GeometryError as exc:
                skipped[f"strip skipped: {exc}"] = skipped.get(f"strip skipped: {exc}", 0) + 1
                continue
            rep.strips.append({**row_c, "r": strip_radius, "mu0": mu0,
                               "measure_drift": drift([s.measure_ratio for s in sched]),
                               "dirichlet_drift": drift([s.dirichlet_ratio for s in sched])})
    rep.notes.extend(f"{msg} ({k} of {len(pts)} points)" for msg, k in skipped.items())
    try:
        rep.box = box_dimension(fb)
    except GeometryError as exc:
        rep.notes.append(f"box dimension skipped: {exc}")
    return rep
