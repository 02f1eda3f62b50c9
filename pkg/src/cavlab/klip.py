"""Sampled (K-Lip) constants of a medium and the gradient bound up to the FB.

For an a-harmonic h on the ball B_d the ratio

    d * max_{B_{d/2}} |grad h| / max_{B_d} |h|

is bounded by K in a (K-Lip) medium. K is estimated from below by the
largest ratio over deterministic probes and seeded random traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from .energy import GridFunction
from .field import BoundaryData, CoefficientField, generate_coefficients, make_grid
from .geometry import GeometryError, _fit_loglog, dyadic_radii
from .solver import solve_linear


@dataclass
class KLipSample:
    scale: float
    label: str
    ratio: float


@dataclass
class KLipReport:
    center: tuple[float, ...]
    samples: list[KLipSample] = dc_field(default_factory=list)

    @property
    def estimate(self) -> float:
        """Lower estimate of K: the largest sampled ratio."""
        return max((s.ratio for s in self.samples), default=0.0)

    @property
    def scales(self) -> list[float]:
        return sorted({s.scale for s in self.samples}, reverse=True)

    def per_scale(self) -> dict[float, float]:
        out: dict[float, float] = {}
        for s in self.samples:
            out[s.scale] = max(out.get(s.scale, 0.0), s.ratio)
        return out

    def rows(self) -> list[dict[str, Any]]:
        return [{"scale": s.scale, "sample": s.label, "ratio": s.ratio} for s in self.samples]


def _probe_traces(dim: int, count: int, seed: int) -> list[tuple[str, Callable]]:
    """Deterministic probes, then seeded band-limited traces (signed / nonneg alternating)."""
    probes: list[tuple[str, Callable]] = [("x1", lambda Y: Y[0])]
    if dim == 2:
        probes += [("x2", lambda Y: Y[1]), ("x1^2-x2^2", lambda Y: Y[0] ** 2 - Y[1] ** 2)]
    rng = np.random.default_rng(seed)
    for i in range(max(count - len(probes), 0)):
        nonneg = i % 2 == 1
        if dim == 1:
            a, b = rng.normal(size=2)
            f = (lambda Y, a=a, b=b: a + b * np.sign(Y[0]))
        else:
            kmax = 4
            coef = rng.normal(size=(kmax, 2)) / np.arange(1, kmax + 1)[:, None]

            def f(Y, coef=coef):
                th = np.arctan2(Y[1], Y[0])
                return sum(c * np.cos((k + 1) * th) + s * np.sin((k + 1) * th)
                           for k, (c, s) in enumerate(coef))
        if nonneg:
            f = (lambda Y, f=f: f(Y) - f(Y).min())
        probes.append((f"{'nonneg' if nonneg else 'signed'}-{i}", f))
    return probes[:max(count, 1)]


def _ball_nodes(fld: CoefficientField, center: np.ndarray, d: float) -> tuple[np.ndarray, np.ndarray]:
    g = fld.grid
    if np.any(center - d < -1e-12) or np.any(center + d > g.length + 1e-12):
        raise GeometryError(f"ball of radius {d:g} at {center.tolist()} leaves the grid")
    X = g.coords()
    rel = [x - c for x, c in zip(X, center)]
    inside = sum(r ** 2 for r in rel) <= d * d * (1 + 1e-12)
    return inside, np.stack(rel, axis=0)


def klip_ratios_on_ball(fld: CoefficientField, center, d: float,
                        traces: Sequence[tuple[str, Callable]]) -> list[KLipSample]:
    """Solve div(a grad h) = 0 in the discrete ball with each trace on its rim."""
    g = fld.grid
    center = np.atleast_1d(np.asarray(center, dtype=float))
    inside, rel = _ball_nodes(fld, center, d)
    # interior of the discrete ball: nodes whose whole stencil is inside
    interior = inside.copy()
    for ax in range(g.dim):
        for shift in (1, -1):
            interior &= np.roll(inside, shift, axis=ax)
    interior &= ~g.boundary_mask
    rim = inside & ~interior
    K = fld.stiffness
    ii = np.flatnonzero(interior.ravel())
    rr = np.flatnonzero(rim.ravel())
    if len(ii) == 0:
        raise GeometryError(f"ball of radius {d:g} has no interior nodes")
    lu = spla.splu(K[ii][:, ii].tocsc(), permc_spec="MMD_AT_PLUS_A")
    K_ir = K[ii][:, rr]
    half = sum(r ** 2 for r in rel) <= (d / 2) ** 2 * (1 + 1e-12)
    out = []
    for label, f in traces:
        vals = np.zeros(g.shape)
        phi = f(rel)
        vals[rim] = phi[rim]
        vals.ravel()[ii] = lu.solve(-(K_ir @ vals.ravel()[rr]))
        grads = np.gradient(vals, g.h) if g.dim > 1 else [np.gradient(vals, g.h)]
        gnorm = np.sqrt(sum(gr ** 2 for gr in grads))
        hmax = float(np.abs(vals[inside]).max())
        if hmax == 0:
            continue
        out.append(KLipSample(d, label, float(d * gnorm[half].max() / hmax)))
    return out


def estimate_klip(fld: CoefficientField, scales: Sequence[float], samples: int = 16,
                  seed: int = 0, center=None) -> KLipReport:
    """K estimate = max ratio over scales x (probes + random traces)."""
    g = fld.grid
    center = np.full(g.dim, g.length / 2) if center is None else np.atleast_1d(np.asarray(center, float))
    traces = _probe_traces(g.dim, samples, seed)
    rep = KLipReport(tuple(float(c) for c in center))
    for d in scales:
        rep.samples.extend(klip_ratios_on_ball(fld, center, float(d), traces))
    return rep


@dataclass
class KLipRefinement:
    nodes: list[int]
    estimates: list[float]

    @property
    def changes(self) -> list[float]:
        e = self.estimates
        return [abs(b - a) / a for a, b in zip(e, e[1:])]

    @property
    def stable(self) -> bool:
        return all(c < 0.10 for c in self.changes)

    @property
    def increasing(self) -> bool:
        e = self.estimates
        return all(b > a for a, b in zip(e, e[1:]))


def klip_refinement(kind: str, params: dict | None, nodes: Sequence[int], scales: Sequence[float],
                    samples: int = 16, seed: int = 0, dim: int = 2) -> KLipRefinement:
    """K estimates of the same medium description on successively finer grids."""
    est = []
    for n in nodes:
        fld = generate_coefficients(make_grid(dim, n), kind, params, seed)
        est.append(estimate_klip(fld, scales, samples, seed).estimate)
    return KLipRefinement(list(nodes), est)


@dataclass
class GradientBound:
    max_gradient: float
    bound: float
    points: int
    band: float

    @property
    def ok(self) -> bool:
        return self.points == 0 or self.max_gradient <= self.bound


def gradient_up_to_fb(u: GridFunction, K: float, c_lip: float, slack: float = 0.25,
                      tau: float = 0.0, band: float | None = None) -> GradientBound:
    """max |grad u| over {u > tau} nodes within `band` (default 4h) of the zero phase,
    against 4 * c_lip * K * (1 + slack)."""
    g = u.grid
    band = 4 * g.h if band is None else band
    bound = 4.0 * c_lip * K * (1.0 + slack)
    pos = u.values > tau
    if pos.all() or not pos.any():
        return GradientBound(0.0, bound, 0, band)
    dist = ndimage.distance_transform_edt(pos) * g.h
    grads = np.gradient(u.values, g.h) if g.dim > 1 else [np.gradient(u.values, g.h)]
    gnorm = np.sqrt(sum(gr ** 2 for gr in grads))
    # centered differences need both neighbours; drop the outermost ring
    sel = pos & (dist <= band + 1e-12) & ~g.boundary_mask
    if not sel.any():
        return GradientBound(0.0, bound, 0, band)
    return GradientBound(float(gnorm[sel].max()), bound, int(sel.sum()), band)


@dataclass
class HolderProbe:
    point: tuple[float, ...]
    radii: np.ndarray
    oscillations: np.ndarray
    exponent: float
    residual: float


def holder_probe(fld: CoefficientField, point, r_min: float | None = None,
                 r_max: float | None = None) -> HolderProbe:
    """Decay exponent of osc_{B_r(point)} h for the a-harmonic h with trace x_1 - p_1.

    A linear trace excites the first singular mode at a cross point of a
    piecewise-constant medium; the fitted slope of log osc against log r
    estimates its Hoelder exponent.
    """
    g = fld.grid
    p = np.atleast_1d(np.asarray(point, dtype=float))
    r_min = 4 * g.h if r_min is None else r_min
    r_max = float(min(p.min(), (g.length - p).min(), g.length / 8)) if r_max is None else r_max
    X = g.coords()
    trace = BoundaryData(g, np.where(g.boundary_mask, X[0] - p[0], 0.0), "linear", {})
    h = solve_linear(fld, 0.0, trace).values
    rel2 = sum((x - c) ** 2 for x, c in zip(X, p))
    radii = dyadic_radii(r_min, r_max)
    osc = np.array([np.ptp(h[rel2 <= r * r * (1 + 1e-12)]) for r in radii])
    slope, _, resid = _fit_loglog(radii, osc)
    return HolderProbe(tuple(float(c) for c in p), radii, osc, slope, resid)
