from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavlab.dumps import (DumpFormatError, field_from_bytes, field_to_bytes, grid_from_bytes,
                          grid_to_bytes)
from cavlab.energy import GridFunction
from cavlab.field import (FieldError, boundary_data, edge_coefficient, generate_coefficients,
                          harmonic_mean, make_grid)
from cavlab.solver import solve_linear


class TestMakeGrid:
    def test_three_nodes(self):
        g = make_grid(1, 3, 1.0)
        assert g.axis.tolist() == [0.0, 0.5, 1.0]
        assert g.h == 0.5

    def test_2d_five_nodes(self):
        g = make_grid(2, 5, 1.0)
        assert np.prod(g.shape) == 25
        assert g.h == 0.25

    def test_power_of_two_spacing_is_exact(self):
        assert make_grid(2, 1025, 1.0).h == 2.0 ** -10

    @pytest.mark.parametrize("dim,n", [(3, 5), (0, 5), (1, 2), (2, 1)])
    def test_rejects_degenerate(self, dim, n):
        with pytest.raises(FieldError):
            make_grid(dim, n)

    def test_rejects_nonpositive_length(self):
        with pytest.raises(FieldError):
            make_grid(1, 5, 0.0)

    def test_coordinates_reproducible(self):
        a, b = make_grid(2, 17, 2.0).coords(), make_grid(2, 17, 2.0).coords()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestCoefficients:
    def test_identity_medium(self):
        f = generate_coefficients(make_grid(2, 9), "constant", {"a": 1.0})
        assert np.all(f.a11 == 1) and np.all(f.a22 == 1) and np.all(f.a12 == 0)

    def test_checkerboard_tiles(self):
        f = generate_coefficients(make_grid(2, 65), "checkerboard", {"lam": 1, "Lam": 10, "tile": 0.125})
        lo, hi = f.eigenvalues()
        assert lo.min() == 1 and hi.max() == 10
        # 8 cells per tile, alternating
        assert f.a11[0, 0] == 1 and f.a11[8, 0] == 10 and f.a11[8, 8] == 1
        assert set(np.unique(f.a11)) == {1.0, 10.0}

    def test_random_eigenvalues_in_bounds(self):
        f = generate_coefficients(make_grid(2, 129), "random", {"lam": 1, "Lam": 4, "tile": 1 / 16}, seed=7)
        lo, hi = f.eigenvalues()
        # exhaustive per-cell scan with numpy's symmetric eigensolver
        mats = np.stack([np.stack([f.a11, f.a12], -1), np.stack([f.a12, f.a22], -1)], -2)
        ev = np.linalg.eigvalsh(mats)
        assert ev.min() >= 1 and ev.max() <= 4
        np.testing.assert_allclose(ev[..., 0], lo)
        np.testing.assert_allclose(ev[..., 1], hi)

    def test_seed_determinism(self):
        g = make_grid(2, 33)
        a = generate_coefficients(g, "random", {"lam": 1, "Lam": 10, "tile": 1 / 8}, seed=3)
        b = generate_coefficients(g, "random", {"lam": 1, "Lam": 10, "tile": 1 / 8}, seed=3)
        c = generate_coefficients(g, "random", {"lam": 1, "Lam": 10, "tile": 1 / 8}, seed=4)
        assert field_to_bytes(a) == field_to_bytes(b)
        assert field_to_bytes(a) != field_to_bytes(c)

    def test_rejects_bad_ellipticity(self):
        with pytest.raises(FieldError):
            generate_coefficients(make_grid(2, 9), "checkerboard", {"lam": 5, "Lam": 2, "tile": 0.25})
        with pytest.raises(FieldError):
            generate_coefficients(make_grid(1, 9), "constant", {"a": 2.0, "lam": 3.0, "Lam": 4.0})

    def test_rejects_tiles_cutting_cells(self):
        with pytest.raises(FieldError):
            generate_coefficients(make_grid(2, 9), "checkerboard", {"tile": 0.1})

    def test_unknown_kind(self):
        with pytest.raises(FieldError):
            generate_coefficients(make_grid(1, 9), "fractal")

    def test_fields_are_immutable(self):
        f = generate_coefficients(make_grid(1, 9), "constant")
        with pytest.raises(ValueError):
            f.a11[0] = 3.0

    @pytest.mark.parametrize("kind", ["constant", "layered", "checkerboard", "random", "smooth"])
    def test_every_kind_passes_audit(self, kind):
        params = {"layered": {"values": [1, 3], "breaks": [0.5]},
                  "checkerboard": {"lam": 1, "Lam": 3, "tile": 0.25}}.get(kind, {})
        f = generate_coefficients(make_grid(2, 33), kind, params, seed=1)
        lo, hi = f.eigenvalues()
        assert lo.min() >= f.lam and hi.max() <= f.Lam


class TestEdgeCoefficient:
    def test_constant(self):
        f = generate_coefficients(make_grid(2, 9), "constant")
        assert edge_coefficient(f, (0, (3, 4))) == 1.0

    def test_harmonic_mean_of_jump(self):
        g = make_grid(2, 5)
        f = generate_coefficients(g, "layered", {"values": [1.0, 10.0], "breaks": [0.5], "axis": 1})
        # edge along axis 0 at j = 2 separates cells with a = 1 (j = 1) and a = 10 (j = 2)
        assert edge_coefficient(f, (0, (1, 2))) == pytest.approx(20 / 11, rel=1e-15)
        assert harmonic_mean(1.0, 10.0) == pytest.approx(20 / 11)

    def test_boundary_edge_uses_single_cell(self):
        g = make_grid(2, 5)
        f = generate_coefficients(g, "layered", {"values": [1.0, 10.0], "breaks": [0.5], "axis": 1})
        assert edge_coefficient(f, (0, (1, 0))) == 1.0
        assert edge_coefficient(f, (0, (1, 4))) == 10.0

    def test_off_grid_edge(self):
        with pytest.raises(FieldError):
            edge_coefficient(generate_coefficients(make_grid(1, 5), "constant"), (0, (4,)))

    @given(st.floats(0.1, 100), st.floats(0.1, 100))
    def test_harmonic_mean_bounds(self, a, b):
        m = harmonic_mean(a, b)
        assert min(a, b) * (1 - 1e-12) <= m <= max(a, b) * (1 + 1e-12)

    def test_layered_flux_continuity(self):
        # exact two-layer harmonic function: flux a u' equal on both sides
        for n in (65, 129):
            g = make_grid(1, n)
            f = generate_coefficients(g, "layered", {"values": [1.0, 4.0], "breaks": [0.5]})
            bd = boundary_data(g, "endpoints", params={"left": 0.0, "right": 1.0})
            u = solve_linear(f, 0.0, bd).values
            # flux q solves q (0.5/1 + 0.5/4) = 1
            q = 1.0 / (0.5 + 0.125)
            exact = np.where(g.axis < 0.5, q * g.axis, q * 0.5 + q / 4 * (g.axis - 0.5))
            assert np.abs(u - exact).max() <= 2 * g.h
            flux = f.a11 * np.diff(u) / g.h
            assert np.abs(flux - q).max() <= 2 * g.h * q


class TestBoundaryData:
    def test_nonneg_flag(self):
        g = make_grid(2, 9)
        assert boundary_data(g, "ramp", 1.0, {"offset": 0.5}).nonneg
        assert not boundary_data(g, "linear", 1.0, {"offset": 0.5}).nonneg

    def test_interior_zeroed(self):
        bd = boundary_data(make_grid(2, 9), "constant", 2.0)
        assert np.all(bd.values[1:-1, 1:-1] == 0) and np.all(bd.boundary_values == 2.0)

    def test_radial_trace_values(self):
        g = make_grid(2, 9)
        bd = boundary_data(g, "radial", 1.0, {"r0": 0.25})
        assert bd.values[0, 4] == pytest.approx(np.log(0.5 / 0.25))

    def test_unknown_trace(self):
        with pytest.raises(FieldError):
            boundary_data(make_grid(1, 9), "spiral")

    def test_endpoints_1d_only(self):
        with pytest.raises(FieldError):
            boundary_data(make_grid(2, 9), "endpoints")


class TestDumps:
    def test_field_round_trip(self):
        f = generate_coefficients(make_grid(2, 17), "random", {"tile": 0.125}, seed=5)
        data = field_to_bytes(f)
        assert data.startswith(b"CAVFIELD v1 2 17x17 ")
        g = field_from_bytes(data)
        assert np.array_equal(g.a11, f.a11) and np.array_equal(g.a22, f.a22)
        assert (g.lam, g.Lam, g.kind, g.seed) == (f.lam, f.Lam, f.kind, f.seed)
        assert field_to_bytes(g) == data

    def test_grid_round_trip_little_endian(self):
        g = make_grid(1, 5)
        u = GridFunction(g, np.array([0.0, 1.0, -2.5, 3.25, 1e-300]))
        data = grid_to_bytes(u)
        header, payload = data.split(b"\n", 1)
        assert header.split()[:4] == [b"CAVGRID", b"v1", b"1", b"5"]
        assert np.frombuffer(payload, "<f8").tolist() == u.values.tolist()
        assert np.array_equal(grid_from_bytes(data).values, u.values)

    def test_truncated_payload(self):
        data = grid_to_bytes(GridFunction(make_grid(1, 5), np.zeros(5)))
        with pytest.raises(DumpFormatError):
            grid_from_bytes(data[:-8])

    def test_bad_magic(self):
        with pytest.raises(DumpFormatError):
            field_from_bytes(b"CAVGRID v1 1 5\n" + bytes(32))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([2.0, 10.0]))
def test_random_fields_pass_audit(seed, Lam):
    f = generate_coefficients(make_grid(2, 17), "random", {"lam": 1.0, "Lam": Lam, "tile": 0.125}, seed)
    lo, hi = f.eigenvalues()
    assert lo.min() >= 1.0 and hi.max() <= Lam
