"""Sign-changing minimisers: slab value, negative-phase density, gradient control.

Only {u > 0} is charged by the functional, so the negative phase is driven
by the Dirichlet energy alone. The same continuation pipeline runs with
signed boundary data; nonnegativity is simply not expected.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Sequence

import numpy as np

from .energy import GridFunction
from .field import BoundaryData, CoefficientField
from .geometry import (GeometryError, ball_values, dyadic_radii, free_boundary,
                       positivity_threshold, unit_ball_volume)
from .potential import PerturbationProfile
from .solver import ContinuationResult, EpsilonLadder, SolveOptions, continuation

DEFAULT_DELTA_STARS = (0.2, 0.1, 0.05, 0.025)


@dataclass
class PhaseSlopes:
    point: tuple[float, ...]
    plus: float
    minus: float
    ratio: float


@dataclass
class TwoPhaseReport:
    inf_u: float
    inf_phi: float
    slab: dict[float, bool] = dc_field(default_factory=dict)
    densities: list[dict[str, float]] = dc_field(default_factory=list)
    slopes: list[PhaseSlopes] = dc_field(default_factory=list)
    continuation: ContinuationResult | None = None

    @property
    def two_phase(self) -> bool:
        return self.inf_u < 0

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {"inf_u": self.inf_u, "inf_phi": self.inf_phi,
                               "slab": {str(k): v for k, v in self.slab.items()}}
        if self.densities:
            out["negative_density_max"] = max(d["ratio"] for d in self.densities)
        if self.slopes:
            out["slope_plus"] = [s.plus for s in self.slopes]
            out["slope_minus"] = [s.minus for s in self.slopes]
            out["control_ratio_max"] = max(s.ratio for s in self.slopes)
        return out


def negative_density(u: GridFunction, point, radii: Sequence[float],
                     tau: float = 0.0) -> list[dict[str, float]]:
    """|{u < -tau} cap B_r| / r^n per radius (node-count measure).

    "fraction" is the same measure divided by |B_r| = omega_n r^n.
    """
    g = u.grid
    out = []
    for r in radii:
        if r < 8 * g.h * (1 - 1e-9):
            raise GeometryError(f"radius {r:g} is below 8h")
        vals = ball_values(u, point, r)
        meas = np.count_nonzero(vals < -tau) * g.cell_volume
        out.append({"r": float(r), "ratio": meas / r ** g.dim,
                    "fraction": meas / (unit_ball_volume(g.dim) * r ** g.dim)})
    return out


def _linear_slope(radii: np.ndarray, sups: np.ndarray) -> float:
    A = np.stack([radii, np.ones_like(radii)], axis=1)
    coef, *_ = np.linalg.lstsq(A, sups, rcond=None)
    return float(coef[0])


def gradient_control(u: GridFunction, point, tau: float = 0.0, r_min: float | None = None,
                     r_max: float | None = None) -> PhaseSlopes:
    """One-sided slopes from dyadic sups of u+ and u- around a two-phase FB point.

    Each slope is the least-squares slope of sup_{B_r} u^(+/-) against r
    (with intercept, which absorbs the offset of the sample point from the
    interface). Ratio = slope+ / max(slope-, h).
    """
    g = u.grid
    p = np.atleast_1d(np.asarray(point, dtype=float))
    near = ball_values(u, p, 8 * g.h, clip=True)
    if not (np.any(near > tau) and np.any(near < -tau)):
        raise GeometryError("not a two-phase free-boundary point (one phase missing in B_8h)")
    r_min = 4 * g.h if r_min is None else r_min
    if r_max is None:
        r_max = float(min(p.min(), (g.length - p).min(), g.length / 8))
    radii = dyadic_radii(r_min, r_max)
    if len(radii) < 3:
        raise GeometryError("fewer than three dyadic radii fit around the point")
    plus = np.array([max(ball_values(u, p, r).max(), 0.0) for r in radii])
    minus = np.array([max(-ball_values(u, p, r).min(), 0.0) for r in radii])
    sp, sm = _linear_slope(radii, plus), _linear_slope(radii, minus)
    return PhaseSlopes(tuple(float(c) for c in p), sp, sm, sp / max(sm, g.h))


def two_phase_points(u: GridFunction, tau: float = 0.0) -> np.ndarray:
    """Centers of FB cells of {u > tau} that also touch {u < -tau}."""
    fb = free_boundary(u, tau)
    if fb.empty:
        return np.zeros((0, u.grid.dim))
    v = u.values
    keep = []
    for c in fb.cells:
        sl = tuple(slice(max(i - 1, 0), i + 3) for i in c)
        if np.any(v[sl] < -tau):
            keep.append(c)
    return (np.asarray(keep).reshape(-1, u.grid.dim) + 0.5) * u.grid.h


def minimize_twophase(fld: CoefficientField, boundary: BoundaryData, profile: PerturbationProfile,
                      ladder: EpsilonLadder, options: SolveOptions | None = None,
                      delta_stars: Sequence[float] = DEFAULT_DELTA_STARS,
                      density_radii: Sequence[float] | None = None,
                      init="multistart") -> tuple[GridFunction, TwoPhaseReport]:
    # the two-phase interface pins easily; search over nearby positions by default
    options = options or SolveOptions(interface_search=8)
    res = continuation(fld, boundary, profile, ladder, options, init=init)
    u = res.u0
    rep = analyze_twophase(u, boundary, delta_stars, density_radii)
    rep.continuation = res
    return u, rep


def analyze_twophase(u: GridFunction, boundary: BoundaryData | None = None,
                     delta_stars: Sequence[float] = DEFAULT_DELTA_STARS,
                     density_radii: Sequence[float] | None = None) -> TwoPhaseReport:
    g = u.grid
    tau = positivity_threshold(u)
    inf_phi = float(boundary.boundary_values.min()) if boundary is not None else float("nan")
    inf_u = float(u.values.min())
    rep = TwoPhaseReport(inf_u, inf_phi, {float(d): inf_u >= -d for d in delta_stars})
    pts = two_phase_points(u, tau)
    for p in pts:
        try:
            rep.slopes.append(gradient_control(u, p, tau))
        except GeometryError:
            continue
        dist = float(min(p.min(), (g.length - p).min()))
        radii = density_radii or [r for r in dyadic_radii(8 * g.h, min(dist, g.length / 8))]
        radii = [r for r in radii if r <= dist + 1e-12]
        rows = negative_density(u, p, radii, tau) if radii else []
        rep.densities.extend({**{f"x{i + 1}": float(x) for i, x in enumerate(p)}, **row}
                             for row in rows)
    return rep
