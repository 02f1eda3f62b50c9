"""Uniform box grids, elliptic coefficient fields and Dirichlet data.

Coefficients live on cells, solutions on nodes. Grid edges carry the
flux coefficient used by the 5-point divergence: the harmonic mean of
the normal-direction entries of the (at most two) cells sharing the edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

KINDS = ("constant", "layered", "checkerboard", "random", "smooth")


class FieldError(ValueError):
    """Invalid grid, coefficient or boundary request."""


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise FieldError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 3:
            raise FieldError(f"need at least 3 nodes per axis, got {self.n}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise FieldError(f"box length must be positive, got {self.length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n - 1,) * self.dim

    @property
    def h(self) -> float:
        return self.length / (self.n - 1)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array per axis, indexing='ij'."""
        if self.dim == 1:
            return (self.axis.copy(),)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        c = (np.arange(self.n - 1) + 0.5) * self.h
        if self.dim == 1:
            return (c,)
        return tuple(np.meshgrid(c, c, indexing="ij"))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if self.dim == 1:
            m[[0, -1]] = True
        else:
            m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    @cached_property
    def node_volume(self) -> np.ndarray:
        """Dual-cell volume of every node (h^n inside, halved per boundary axis)."""
        w1 = np.full(self.n, self.h)
        w1[[0, -1]] *= 0.5
        if self.dim == 1:
            return w1
        return np.outer(w1, w1)


def make_grid(dim: int, nodes_per_axis: int, box_length: float = 1.0) -> Grid:
    return Grid(int(dim), int(nodes_per_axis), float(box_length))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    grid: Grid
    a11: np.ndarray
    a12: np.ndarray | None
    a22: np.ndarray | None
    lam: float
    Lam: float
    kind: str = "constant"
    seed: int = 0
    params: Mapping[str, Any] = dc_field(default_factory=dict)

    def __post_init__(self):
        for a in (self.a11, self.a12, self.a22):
            if a is not None:
                a.setflags(write=False)

    @property
    def is_diagonal(self) -> bool:
        return self.a12 is None or not np.any(self.a12)

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (min, max) eigenvalues of a(X)."""
        if self.grid.dim == 1:
            return self.a11, self.a11
        a12 = self.a12 if self.a12 is not None else 0.0
        mean = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), a12)
        return mean - rad, mean + rad

    def check_ellipticity(self) -> None:
        if not (0 < self.lam <= self.Lam):
            raise FieldError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        lo, hi = self.eigenvalues()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise FieldError("non-finite coefficient entries")
        if lo.min() < self.lam or hi.max() > self.Lam:
            raise FieldError(
                f"eigenvalues in [{lo.min():.6g}, {hi.max():.6g}] leave "
                f"[{self.lam}, {self.Lam}]")

    def node_diagonal(self) -> tuple[np.ndarray, ...]:
        """Diagonal entries averaged from the adjacent cells onto nodes."""
        out = []
        for a in self.diagonal_entries():
            pad = np.pad(a, 1, mode="edge")
            if self.grid.dim == 1:
                out.append(0.5 * (pad[:-1] + pad[1:]))
            else:
                out.append(0.25 * (pad[:-1, :-1] + pad[1:, :-1] + pad[:-1, 1:] + pad[1:, 1:]))
        return tuple(out)

    def diagonal_entries(self) -> tuple[np.ndarray, ...]:
        if self.grid.dim == 1:
            return (self.a11,)
        return (self.a11, self.a22)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Matrix K with 1/2 u^T K u the discrete Dirichlet energy."""
        return _assemble_stiffness(self)


def _tile_index(centers: np.ndarray, tile: float, h: float) -> np.ndarray:
    ratio = tile / h
    if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
        raise FieldError(f"tile size {tile} must be a positive multiple of h={h}")
    return np.floor(centers / tile).astype(np.int64)


def _bounds(params: Mapping[str, Any], default: tuple[float, float]) -> tuple[float, float]:
    lam = float(params.get("lam", default[0]))
    Lam = float(params.get("Lam", default[1]))
    if not (0 < lam <= Lam):
        raise FieldError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")
    return lam, Lam


def generate_coefficients(grid: Grid, kind: str, params: Mapping[str, Any] | None = None,
                          seed: int = 0) -> CoefficientField:
    """Build a (lambda, Lambda)-elliptic medium of the given kind.

    kinds:
      constant      a (scalar) or a11/a12/a22
      layered       values=[...], breaks=[...] along `axis` (default 0)
      checkerboard  lam, Lam, tile: lam on even tiles, Lam on odd ones
      random        lam, Lam, tile: i.i.d. uniform diagonal entries per tile
                    (isotropic=True draws one scalar per tile)
      smooth        lam, Lam, freq: Lipschitz sinusoidal scalar medium with
                    seeded phases
    """
    params = dict(params or {})
    shape = grid.cell_shape
    centers = grid.cell_centers()
    a12 = np.zeros(shape) if grid.dim == 2 else None

    if kind == "constant":
        if "a" in params:
            a = float(params["a"])
            a11 = np.full(shape, a)
            a22 = np.full(shape, a) if grid.dim == 2 else None
        else:
            a11 = np.full(shape, float(params.get("a11", 1.0)))
            a22 = np.full(shape, float(params.get("a22", params.get("a11", 1.0)))) if grid.dim == 2 else None
            if grid.dim == 2:
                a12 = np.full(shape, float(params.get("a12", 0.0)))
        probe = CoefficientField(grid, a11, a12, a22, 1.0, 1.0)
        lo, hi = probe.eigenvalues()
        lam, Lam = _bounds(params, (float(lo.min()), float(hi.max())))
    elif kind == "layered":
        values = [float(v) for v in params.get("values", [1.0])]
        breaks = [float(b) for b in params.get("breaks", [])]
        if len(breaks) != len(values) - 1 or sorted(breaks) != breaks:
            raise FieldError("layered needs len(breaks) == len(values) - 1, breaks increasing")
        axis = int(params.get("axis", 0))
        if axis >= grid.dim:
            raise FieldError(f"layer axis {axis} out of range for dim {grid.dim}")
        idx = np.searchsorted(np.asarray(breaks), centers[axis], side="right")
        a11 = np.asarray(values)[idx]
        a22 = a11.copy() if grid.dim == 2 else None
        lam, Lam = _bounds(params, (min(values), max(values)))
    elif kind == "checkerboard":
        lam, Lam = _bounds(params, (1.0, 10.0))
        tile = float(params.get("tile", 0.125))
        parity = sum(_tile_index(c, tile, grid.h) for c in centers) % 2
        a11 = np.where(parity == 0, lam, Lam)
        a22 = a11.copy() if grid.dim == 2 else None
    elif kind == "random":
        lam, Lam = _bounds(params, (1.0, 4.0))
        tile = float(params.get("tile", 1 / 16))
        ntiles = int(round(grid.length / tile))
        rng = np.random.default_rng(seed)
        tshape = (ntiles,) * grid.dim
        draws = rng.uniform(lam, Lam, size=(2,) + tshape)
        tidx = tuple(_tile_index(c, tile, grid.h) for c in centers)
        a11 = draws[0][tidx]
        if grid.dim == 2:
            a22 = a11.copy() if params.get("isotropic", False) else draws[1][tidx]
        else:
            a22 = None
    elif kind == "smooth":
        lam, Lam = _bounds(params, (1.0, 4.0))
        freq = float(params.get("freq", 2.0))
        rng = np.random.default_rng(seed)
        phase = rng.uniform(0.0, 2 * np.pi, size=grid.dim)
        s = np.ones(shape)
        for c, p in zip(centers, phase):
            s = s * np.sin(2 * np.pi * freq * c / grid.length + p)
        a11 = lam + (Lam - lam) * 0.5 * (1.0 + s)
        a22 = a11.copy() if grid.dim == 2 else None
    else:
        raise FieldError(f"unknown coefficient kind {kind!r}; expected one of {KINDS}")

    if grid.dim == 1:
        a12 = None
    fld = CoefficientField(grid, np.ascontiguousarray(a11, dtype=np.float64),
                           a12 if a12 is None else np.ascontiguousarray(a12, dtype=np.float64),
                           a22 if a22 is None else np.ascontiguousarray(a22, dtype=np.float64),
                           lam, Lam, kind, int(seed), params)
    fld.check_ellipticity()
    return fld


def harmonic_mean(a, b):
    return 2.0 * a * b / (a + b)


def edge_coefficient(fld: CoefficientField, edge: tuple[int, tuple[int, ...]]) -> float:
    """Flux coefficient of one grid edge.

    `edge` is (axis, lower node index); the edge joins that node to its
    neighbour along `axis`.
    """
    axis, node = edge
    node = tuple(int(i) for i in node)
    g = fld.grid
    if g.dim == 1:
        (i,) = node
        if axis != 0 or not 0 <= i < g.n - 1:
            raise FieldError(f"no edge {edge} on a 1D grid of {g.n} nodes")
        return float(fld.a11[i])
    i, j = node
    if axis == 0:
        if not (0 <= i < g.n - 1 and 0 <= j < g.n):
            raise FieldError(f"no edge {edge}")
        cells = [(i, jj) for jj in (j - 1, j) if 0 <= jj < g.n - 1]
        vals = [fld.a11[c] for c in cells]
    elif axis == 1:
        if not (0 <= i < g.n and 0 <= j < g.n - 1):
            raise FieldError(f"no edge {edge}")
        cells = [(ii, j) for ii in (i - 1, i) if 0 <= ii < g.n - 1]
        vals = [fld.a22[c] for c in cells]
    else:
        raise FieldError(f"bad axis {axis}")
    if len(vals) == 1:
        return float(vals[0])
    return float(harmonic_mean(vals[0], vals[1]))


def edge_weights(fld: CoefficientField) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per axis: (flux coefficient, dual-volume fraction) on every edge.

    Edges along axis k have shape `shape` with one fewer entry along k.
    The fraction is 1 for edges interior to the box and 1/2 for edges
    lying on the boundary.
    """
    if not fld.is_diagonal:
        raise FieldError("the 5-point flux scheme needs a diagonal medium (a12 == 0)")
    g = fld.grid
    if g.dim == 1:
        return [(fld.a11, np.ones(g.n - 1))]
    out = []
    for axis, a in ((0, fld.a11), (1, fld.a22)):
        other = 1 - axis
        pad = np.pad(a, [(1, 1) if k == other else (0, 0) for k in range(2)], mode="edge")
        lo = np.take(pad, np.arange(0, g.n), axis=other)
        hi = np.take(pad, np.arange(1, g.n + 1), axis=other)
        w = harmonic_mean(lo, hi)
        frac = np.ones_like(w)
        sl = [slice(None)] * 2
        sl[other] = 0
        frac[tuple(sl)] = 0.5
        sl[other] = -1
        frac[tuple(sl)] = 0.5
        out.append((w, frac))
    return out


def _assemble_stiffness(fld: CoefficientField) -> sp.csr_matrix:
    g = fld.grid
    idx = np.arange(np.prod(g.shape)).reshape(g.shape)
    scale = g.h ** (g.dim - 2)
    rows, cols, vals = [], [], []
    for axis, (w, frac) in enumerate(edge_weights(fld)):
        lo = np.take(idx, np.arange(g.n - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, g.n), axis=axis).ravel()
        c = (w * frac).ravel() * scale
        rows += [lo, hi, lo, hi]
        cols += [lo, hi, hi, lo]
        vals += [c, c, -c, -c]
    n = idx.size
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


# --------------------------------------------------------------------------
# boundary data

@dataclass(frozen=True, eq=False)
class BoundaryData:
    grid: Grid
    values: np.ndarray
    trace: str = "custom"
    params: Mapping[str, Any] = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise FieldError("boundary values must be a nodal array")
        self.values.setflags(write=False)

    @property
    def nonneg(self) -> bool:
        return bool(np.all(self.values[self.grid.boundary_mask] >= 0))

    @property
    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_mask]


TRACES = ("zero", "constant", "linear", "ramp", "endpoints", "radial", "harmonic_poly", "cosine")


def boundary_data(grid: Grid, trace: str, amplitude: float = 1.0,
                  params: Mapping[str, Any] | None = None) -> BoundaryData:
    """Named analytic boundary traces, scaled by `amplitude`.

    zero           0
    constant       amplitude
    linear         amplitude * (x_1 - offset)
    ramp           amplitude * max(x_1 - offset, 0) (nonnegative)
    endpoints      1D only: left / right values (amplitude ignored)
    radial         amplitude * log(|x - center| / r0)
    harmonic_poly  amplitude * ((x_1-c_1)^2 - (x_2-c_2)^2)
    cosine         amplitude * (1 + cos(2 pi k x_1 / L)) / 2 (nonnegative)
    """
    params = dict(params or {})
    X = grid.coords()
    amp = float(amplitude)
    center = np.asarray(params.get("center", [grid.length / 2] * grid.dim), dtype=float)
    if trace == "zero":
        vals = np.zeros(grid.shape)
    elif trace == "constant":
        vals = np.full(grid.shape, amp)
    elif trace == "linear":
        vals = amp * (X[0] - float(params.get("offset", 0.0)))
    elif trace == "ramp":
        vals = amp * np.maximum(X[0] - float(params.get("offset", 0.0)), 0.0)
    elif trace == "endpoints":
        if grid.dim != 1:
            raise FieldError("'endpoints' trace is 1D only")
        vals = np.zeros(grid.shape)
        vals[0] = float(params.get("left", 0.0))
        vals[-1] = float(params.get("right", 1.0))
    elif trace == "radial":
        r0 = float(params["r0"])
        if r0 <= 0:
            raise FieldError("radial trace needs r0 > 0")
        r = np.sqrt(sum((x - c) ** 2 for x, c in zip(X, center)))
        with np.errstate(divide="ignore"):
            vals = amp * np.log(np.maximum(r, 1e-300) / r0)
    elif trace == "harmonic_poly":
        if grid.dim != 2:
            raise FieldError("'harmonic_poly' trace is 2D only")
        vals = amp * ((X[0] - center[0]) ** 2 - (X[1] - center[1]) ** 2)
    elif trace == "cosine":
        k = float(params.get("k", 1.0))
        vals = amp * 0.5 * (1.0 + np.cos(2 * np.pi * k * X[0] / grid.length))
    else:
        raise FieldError(f"unknown boundary trace {trace!r}; expected one of {TRACES}")
    vals = np.where(grid.boundary_mask, vals, 0.0)
    if not np.all(np.isfinite(vals)):
        raise FieldError(f"trace {trace!r} is not finite on the boundary")
    return BoundaryData(grid, np.ascontiguousarray(vals, dtype=np.float64), trace,
                        {**params, "amplitude": amp})


def boundary_from_array(grid: Grid, values: np.ndarray) -> BoundaryData:
    vals = np.where(grid.boundary_mask, np.asarray(values, dtype=np.float64), 0.0)
    return BoundaryData(grid, vals, "custom", {})
