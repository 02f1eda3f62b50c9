"""Discrete energies, first variation and Euler-Lagrange residuals.

Dirichlet part: 1/2 u^T K u with K the edge-based stiffness of the field.
Potential part: sum_i V_i B_eps(u_i), V_i the dual-cell volume of node i.
With this lumped quadrature the gradient with respect to an interior node
is exactly (K u)_i + h^n beta_eps(u_i).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import BoundaryData, CoefficientField, Grid
from .potential import PerturbationProfile, beta_eps, bigB_eps, kink_slope


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"values of shape {self.values.shape} on grid {self.grid.shape}")

    @classmethod
    def from_boundary(cls, boundary: BoundaryData, interior=0.0) -> "GridFunction":
        vals = np.where(boundary.grid.boundary_mask, boundary.values, interior)
        return cls(boundary.grid, np.array(vals, dtype=np.float64))

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return self.grid.boundary_mask

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    potential: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.potential

    def as_dict(self) -> dict:
        return {"dirichlet": self.dirichlet, "potential": self.potential, "total": self.total}


def _check(u: GridFunction, fld: CoefficientField) -> None:
    if u.grid != fld.grid:
        raise GridMismatchError(f"solution grid {u.grid} differs from field grid {fld.grid}")


def dirichlet_energy(u: GridFunction, fld: CoefficientField) -> float:
    _check(u, fld)
    v = u.values.ravel()
    return 0.5 * float(v @ (fld.stiffness @ v))


def energy_eps(u: GridFunction, fld: CoefficientField, profile: PerturbationProfile,
               eps: float, weight: float = 1.0) -> EnergyBreakdown:
    """F_eps(u); `weight` multiplies the potential (rescaled problems)."""
    _check(u, fld)
    pot = weight * float(np.sum(u.grid.node_volume * bigB_eps(profile, eps, u.values)))
    return EnergyBreakdown(dirichlet_energy(u, fld), pot)


def positivity_cells(u: np.ndarray, tau: float) -> np.ndarray:
    pos = u > tau
    if pos.ndim == 1:
        return pos[:-1] & pos[1:]
    return pos[:-1, :-1] & pos[1:, :-1] & pos[:-1, 1:] & pos[1:, 1:]


def energy_ac(u: GridFunction, fld: CoefficientField, tau: float = 0.0) -> EnergyBreakdown:
    """Sharp functional: Dirichlet part plus the volume of cells with u > tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    _check(u, fld)
    vol = float(np.count_nonzero(positivity_cells(u.values, tau))) * u.grid.cell_volume
    return EnergyBreakdown(dirichlet_energy(u, fld), vol)


def divergence(u: GridFunction, fld: CoefficientField) -> np.ndarray:
    """div_h(a grad u) at every node (meaningful on interior nodes)."""
    _check(u, fld)
    return -(fld.stiffness @ u.values.ravel()).reshape(u.grid.shape) / u.grid.cell_volume


def el_residual(u: GridFunction, fld: CoefficientField, profile: PerturbationProfile,
                eps: float, delta: float = 1.0) -> GridFunction:
    """div_h(a grad u) - delta * beta_eps(u) on interior nodes, 0 on the boundary."""
    r = divergence(u, fld) - delta * beta_eps(profile, eps, u.values)
    return GridFunction(u.grid, np.where(u.grid.boundary_mask, 0.0, r))


def energy_gradient(u: GridFunction, fld: CoefficientField, profile: PerturbationProfile,
                    eps: float, delta: float = 1.0) -> GridFunction:
    r = el_residual(u, fld, profile, eps, delta)
    return GridFunction(u.grid, -r.values * u.grid.cell_volume)


def stationarity_residual(u: GridFunction, fld: CoefficientField,
                          profile: PerturbationProfile, eps: float,
                          delta: float = 1.0) -> GridFunction:
    """Euler-Lagrange residual measured against the subdifferential at u = 0.

    Where u is exactly zero, B_eps has a convex kink whose subdifferential
    is [0, delta * beta_eps(0+)]; the residual there is the distance of
    div_h(a grad u) to that interval. Elsewhere it equals el_residual.
    """
    div = divergence(u, fld)
    r = div - delta * beta_eps(profile, eps, u.values)
    at_zero = u.values == 0.0
    if np.any(at_zero):
        top = delta * kink_slope(profile, eps)
        r = np.where(at_zero, div - np.clip(div, 0.0, top), r)
    return GridFunction(u.grid, np.where(u.grid.boundary_mask, 0.0, r))
