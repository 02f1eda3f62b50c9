"""Binary dumps of coefficient fields (CAVFIELD) and nodal functions (CAVGRID).

Layout: one ASCII header line terminated by '\\n', then little-endian
float64 payload in row-major order. Header tokens:

    CAVFIELD v1 <dim> <n>x<n> <lambda> <Lambda> <kind> <seed> length=<L>
    CAVGRID v1 <dim> <n>x<n> length=<L>

Shapes are node counts per axis. CAVFIELD entries are per cell with the
components interleaved (a11, a12, a22) in 2D, a11 alone in 1D. The
trailing length token is optional on read (default 1.0).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .energy import GridFunction
from .field import CoefficientField, FieldError, Grid

_LE = np.dtype("<f8")


class DumpFormatError(ValueError):
    pass


def _shape_token(grid: Grid) -> str:
    return "x".join(str(n) for n in grid.shape)


def _parse_shape(tok: str, dim: int) -> int:
    parts = [int(p) for p in tok.split("x")]
    if len(parts) != dim or len(set(parts)) != 1:
        raise DumpFormatError(f"bad shape token {tok!r} for dim {dim}")
    return parts[0]


def _split(data: bytes) -> tuple[list[str], bytes]:
    nl = data.find(b"\n")
    if nl < 0:
        raise DumpFormatError("missing header line")
    return data[:nl].decode("ascii").split(), data[nl + 1:]


def _length(tokens: list[str]) -> float:
    for t in tokens:
        if t.startswith("length="):
            return float(t.split("=", 1)[1])
    return 1.0


def field_to_bytes(fld: CoefficientField) -> bytes:
    g = fld.grid
    header = (f"CAVFIELD v1 {g.dim} {_shape_token(g)} {fld.lam!r} {fld.Lam!r} "
              f"{fld.kind} {fld.seed} length={g.length!r}\n")
    if g.dim == 1:
        payload = fld.a11.astype(_LE).tobytes()
    else:
        a12 = fld.a12 if fld.a12 is not None else np.zeros_like(fld.a11)
        payload = np.stack([fld.a11, a12, fld.a22], axis=-1).astype(_LE).tobytes()
    return header.encode("ascii") + payload


def field_from_bytes(data: bytes) -> CoefficientField:
    tok, payload = _split(data)
    if len(tok) < 8 or tok[0] != "CAVFIELD" or tok[1] != "v1":
        raise DumpFormatError(f"not a CAVFIELD v1 header: {' '.join(tok)!r}")
    dim = int(tok[2])
    n = _parse_shape(tok[3], dim)
    lam, Lam, kind, seed = float(tok[4]), float(tok[5]), tok[6], int(tok[7])
    try:
        grid = Grid(dim, n, _length(tok[8:]))
    except FieldError as exc:
        raise DumpFormatError(str(exc)) from exc
    ncomp = 1 if dim == 1 else 3
    arr = np.frombuffer(payload, dtype=_LE)
    expected = ncomp * (n - 1) ** dim
    if arr.size != expected:
        raise DumpFormatError(f"payload has {arr.size} entries, expected {expected}")
    arr = arr.astype(np.float64)
    if dim == 1:
        fld = CoefficientField(grid, arr.copy(), None, None, lam, Lam, kind, seed)
    else:
        arr = arr.reshape(grid.cell_shape + (3,))
        fld = CoefficientField(grid, arr[..., 0].copy(), arr[..., 1].copy(), arr[..., 2].copy(),
                               lam, Lam, kind, seed)
    fld.check_ellipticity()
    return fld


def grid_to_bytes(u: GridFunction) -> bytes:
    g = u.grid
    header = f"CAVGRID v1 {g.dim} {_shape_token(g)} length={g.length!r}\n"
    return header.encode("ascii") + u.values.astype(_LE).tobytes()


def grid_from_bytes(data: bytes) -> GridFunction:
    tok, payload = _split(data)
    if len(tok) < 4 or tok[0] != "CAVGRID" or tok[1] != "v1":
        raise DumpFormatError(f"not a CAVGRID v1 header: {' '.join(tok)!r}")
    dim = int(tok[2])
    n = _parse_shape(tok[3], dim)
    grid = Grid(dim, n, _length(tok[4:]))
    arr = np.frombuffer(payload, dtype=_LE)
    if arr.size != n ** dim:
        raise DumpFormatError(f"payload has {arr.size} entries, expected {n ** dim}")
    return GridFunction(grid, arr.astype(np.float64).reshape(grid.shape))


def write_field(path, fld: CoefficientField) -> Path:
    path = Path(path)
    path.write_bytes(field_to_bytes(fld))
    return path


def read_field(path) -> CoefficientField:
    return field_from_bytes(Path(path).read_bytes())


def write_grid(path, u: GridFunction) -> Path:
    path = Path(path)
    path.write_bytes(grid_to_bytes(u))
    return path


def read_grid(path) -> GridFunction:
    return grid_from_bytes(Path(path).read_bytes())
