"""Closed-form and brute-force reference solutions used by the tests.

Every oracle here is independent of the solver: closed forms, scalar
root finding, or minimisation of a one-parameter energy.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq, minimize_scalar

SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------------
# 1D one-phase problem on [0, 1]: u(0) = 0, u(1) = b, medium a

def one_phase_1d(b: float, a: float = 1.0) -> tuple[float, float]:
    """(x0, slope) of the minimiser of int 1/2 a u'^2 + chi_{u>0}.

    On {u > 0} the slope is p = sqrt(2/a) (flux condition a p^2 = 2), so
    x0 = 1 - b/p. When b/p >= 1 the minimiser is the linear function.
    """
    p = math.sqrt(2.0 / a)
    x0 = 1.0 - b / p
    if x0 <= 0:
        return 0.0, b
    return x0, p


def one_phase_1d_values(x: np.ndarray, b: float, a: float = 1.0) -> np.ndarray:
    x0, p = one_phase_1d(b, a)
    return p * np.maximum(x - x0, 0.0)


def one_phase_1d_energy(b: float, a: float = 1.0) -> float:
    """Sharp energy of the minimiser: a p^2 (1 - x0)/2 + (1 - x0) = 2 (1 - x0)."""
    x0, p = one_phase_1d(b, a)
    return 0.5 * a * p * p * (1 - x0) + (1 - x0)


def eps_layer_1d(x: np.ndarray, b: float, eps: float) -> np.ndarray:
    """Exact eps-minimiser for the indicator profile, a = 1, u(0) = 0, u(1) = b.

    The first integral 1/2 u'^2 = B_eps(u) gives u = 0 up to x0, then
    u = (x - x0)^2 / (2 eps) until u = eps (at x0 + sqrt(2) eps), then
    slope sqrt(2). Requires x0 > 0.
    """
    x0 = 1.0 - SQRT2 * eps - (b - eps) / SQRT2
    if x0 <= 0:
        raise ValueError("data too large for an eps-layer inside the interval")
    t = x - x0
    top = SQRT2 * eps
    return np.where(t <= 0, 0.0, np.where(t <= top, t * t / (2 * eps), eps + SQRT2 * (t - top)))


def layered_1d(b: float, a_left: float, a_right: float, split: float = 0.5) -> tuple[float, float]:
    """(x0, energy) for a two-layer medium by minimising the one-parameter energy.

    For a free boundary at x0 the positive phase is the a-harmonic function
    with u(x0) = 0, u(1) = b: energy b^2 / (2 R(x0)) + (1 - x0) with the
    resistance R(x0) = int_{x0}^1 dx / a.
    """
    def resistance(x0):
        if x0 >= split:
            return (1 - x0) / a_right
        return (split - x0) / a_left + (1 - split) / a_right

    def energy(x0):
        return 0.5 * b * b / resistance(x0) + (1 - x0)

    return _brute_min(energy, 0.0, 1.0 - 1e-9)


def _brute_min(f, lo: float, hi: float, n: int = 20001) -> tuple[float, float]:
    xs = np.linspace(lo, hi, n)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmin(vals))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, n - 1)]
    if b > a:
        res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-13})
        if res.fun <= vals[k]:
            return float(res.x), float(res.fun)
    return float(xs[k]), float(vals[k])


# --------------------------------------------------------------------------
# 1D two-phase problem: u(0) = -s, u(1) = b, a = 1

def two_phase_1d(s: float, b: float) -> dict[str, float]:
    """Brute-force minimiser over the interface position x.

    Any zero plateau [x0, x1] costs Dirichlet energy on the negative side
    without saving volume, so the optimum has x0 = x1 = x and energy
    s^2 / (2x) + b^2 / (2 (1 - x)) + (1 - x).
    """
    def energy(x):
        neg = 0.5 * s * s / x if s > 0 else 0.0
        return neg + 0.5 * b * b / (1 - x) + (1 - x)

    x, e = _brute_min(energy, 1e-6, 1 - 1e-6)
    return {"x0": x, "energy": e, "slope_plus": b / (1 - x),
            "slope_minus": s / x if s > 0 else 0.0}


# --------------------------------------------------------------------------
# 2D radial problem

def radial_fb_radius(c: float, R: float, a: float = 1.0) -> float:
    """Free-boundary radius r_f of u = A log(r / r_f) on the annulus with u(R) = c.

    Conditions: A / r_f = sqrt(2/a) at the free boundary and A log(R/r_f) = c.
    g(r) = sqrt(2/a) r log(R/r) - c peaks at r = R/e; the stable branch is
    r_f in (R/e, R). No free boundary exists when c exceeds the peak.
    """
    p = math.sqrt(2.0 / a)
    g = lambda r: p * r * math.log(R / r) - c
    if g(R / math.e) < 0:
        raise ValueError("boundary value too large: no radial free boundary")
    return brentq(g, R / math.e, R, xtol=1e-15, rtol=1e-15)


# --------------------------------------------------------------------------
# synthetic functions

def cone_1d(x: np.ndarray, x0: float, slope: float = SQRT2) -> np.ndarray:
    return slope * np.maximum(x - x0, 0.0)


def cusp(X: tuple[np.ndarray, ...], center, alpha: float) -> np.ndarray:
    r = np.sqrt(sum((x - c) ** 2 for x, c in zip(X, center)))
    return r ** alpha


def cusp_crossover(delta_star: float, alpha: float) -> float:
    """k at which sup_{B_{sqrt(d)/2^k}} |x|^alpha = 2^-k, i.e. 2^{(1-alpha) k} = d^{-alpha/2}."""
    return -alpha * 0.5 * math.log2(delta_star) / (1 - alpha)


def wedge(X: tuple[np.ndarray, ...], center, angle: float) -> np.ndarray:
    """u = -r on the sector |theta| < angle/2 (negative phase), u = r elsewhere."""
    dx, dy = X[0] - center[0], X[1] - center[1]
    r = np.sqrt(dx * dx + dy * dy)
    th = np.arctan2(dy, dx)
    return np.where(np.abs(th) < angle / 2, -r, r)
