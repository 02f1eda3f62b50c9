"""Base potentials beta on (0, 1], their eps-scalings and primitives.

    beta_eps(t) = beta(t / eps) / eps,      B_eps(t) = int_0^t beta_eps

Both profiles vanish at t = 0 (open support), so u == 0 is an exact
critical point of the perturbed energy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PerturbationProfile:
    name: str
    sup: float    # M = sup beta
    mass: float   # m = int beta
    jump0: float  # beta(0+): strength of the convex kink of B at 0

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0) & (s <= 1)
        if self.name == "indicator":
            return np.where(inside, 1.0, 0.0)
        return np.where(inside, 6.0 * s * (1.0 - s), 0.0)

    def primitive(self, s):
        """int_0^s beta, closed form."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        if self.name == "indicator":
            return s
        return 3.0 * s ** 2 - 2.0 * s ** 3

    # Convex/concave split of the primitive, used by the solver. The kink
    # jump0 * s^+ is kept apart; "convex" below is the smooth convex rest,
    # obtained by keeping only the positive part of beta'.

    def convex_slope(self, s):
        s = np.asarray(s, dtype=float)
        if self.name == "indicator":
            return np.zeros_like(s)
        return np.where(s > 0, self.beta(np.minimum(s, 0.5)), 0.0)

    def convex_curvature(self, s):
        s = np.asarray(s, dtype=float)
        if self.name == "indicator":
            return np.zeros_like(s)
        return np.where((s > 0) & (s < 0.5), 6.0 - 12.0 * s, 0.0)

    def convex_primitive(self, s):
        s = np.asarray(s, dtype=float)
        if self.name == "indicator":
            return np.zeros_like(s)
        t = np.clip(s, 0.0, 0.5)
        return 3.0 * t ** 2 - 2.0 * t ** 3 + 1.5 * np.maximum(s - 0.5, 0.0)


INDICATOR = PerturbationProfile("indicator", sup=1.0, mass=1.0, jump0=1.0)
BUMP = PerturbationProfile("bump", sup=1.5, mass=1.0, jump0=0.0)
PROFILES = {p.name: p for p in (INDICATOR, BUMP)}


def get_profile(name: str) -> PerturbationProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def beta_eps(profile: PerturbationProfile, eps: float, t):
    _check_eps(eps)
    return profile.beta(np.asarray(t, dtype=float) / eps) / eps


def bigB_eps(profile: PerturbationProfile, eps: float, t):
    _check_eps(eps)
    return profile.primitive(np.asarray(t, dtype=float) / eps)


def kink_slope(profile: PerturbationProfile, eps: float) -> float:
    """Right derivative of B_eps at 0."""
    _check_eps(eps)
    return profile.jump0 / eps


def convex_slope_eps(profile: PerturbationProfile, eps: float, t):
    _check_eps(eps)
    return profile.convex_slope(np.asarray(t, dtype=float) / eps) / eps


def convex_curvature_eps(profile: PerturbationProfile, eps: float, t):
    _check_eps(eps)
    return profile.convex_curvature(np.asarray(t, dtype=float) / eps) / eps ** 2


def convex_primitive_eps(profile: PerturbationProfile, eps: float, t):
    _check_eps(eps)
    return profile.convex_primitive(np.asarray(t, dtype=float) / eps)


def smooth_part_slope(profile: PerturbationProfile, eps: float, t):
    """Derivative of the concave part of B_eps.

    B_eps = kink_slope * t^+ + convex part + concave part. For the indicator
    the concave part is -(t - eps)^+ / eps, so its linearisation majorises
    it. Takes the left value at t = eps.
    """
    t = np.asarray(t, dtype=float)
    return (beta_eps(profile, eps, t) - kink_slope(profile, eps) * (t > 0)
            - convex_slope_eps(profile, eps, t))
