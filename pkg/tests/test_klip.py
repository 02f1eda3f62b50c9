from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from cavlab.energy import GridFunction
from cavlab.field import generate_coefficients, make_grid
from cavlab.geometry import GeometryError
from cavlab.klip import (estimate_klip, gradient_up_to_fb, holder_probe, klip_ratios_on_ball,
                         klip_refinement)


def _const(dim, n):
    return generate_coefficients(make_grid(dim, n), "constant")


class TestRatios:
    @pytest.mark.parametrize("d", [0.25, 0.125, 0.0625])
    def test_linear_probe_ratio_is_one(self, d):
        f = _const(2, 129)
        s = klip_ratios_on_ball(f, (0.5, 0.5), d, [("x1", lambda Y: Y[0])])
        assert s[0].ratio == pytest.approx(1.0, rel=1e-9)

    def test_1d_probe(self):
        f = _const(1, 257)
        s = klip_ratios_on_ball(f, (0.5,), 0.25, [("x1", lambda Y: Y[0])])
        assert s[0].ratio == pytest.approx(1.0, rel=1e-9)

    def test_zero_trace_skipped(self):
        f = _const(2, 65)
        assert klip_ratios_on_ball(f, (0.5, 0.5), 0.25, [("zero", lambda Y: 0 * Y[0])]) == []

    def test_ball_must_fit(self):
        with pytest.raises(GeometryError):
            klip_ratios_on_ball(_const(2, 65), (0.1, 0.5), 0.25, [("x1", lambda Y: Y[0])])


class TestEstimate:
    def test_identity_range(self):
        rep = estimate_klip(_const(2, 129), [0.25, 0.125], samples=8, seed=0)
        assert 1.0 - 1e-9 <= rep.estimate <= 4.0
        assert rep.scales == [0.25, 0.125]
        assert set(rep.per_scale()) == {0.25, 0.125}
        assert len(rep.rows()) == len(rep.samples)

    def test_monotone_in_samples(self):
        f = generate_coefficients(make_grid(2, 65), "random", {"lam": 1, "Lam": 4, "tile": 0.125}, seed=2)
        ks = [estimate_klip(f, [0.25], samples=m, seed=5).estimate for m in (3, 6, 12)]
        assert ks[0] <= ks[1] <= ks[2]

    def test_seeded(self):
        f = _const(2, 65)
        a = estimate_klip(f, [0.25], samples=8, seed=1).rows()
        b = estimate_klip(f, [0.25], samples=8, seed=1).rows()
        assert a == b

    def test_refinement_stable_on_identity(self):
        ref = klip_refinement("constant", None, [65, 129, 257], [0.25, 0.125], samples=6)
        assert ref.stable, ref.changes
        assert all(1.0 - 1e-9 <= k <= 4.0 for k in ref.estimates)


class TestGradientBound:
    def test_zero_function_vacuous(self):
        u = GridFunction(make_grid(2, 33), np.zeros((33, 33)))
        gb = gradient_up_to_fb(u, 1.0, 1.0)
        assert gb.points == 0 and gb.ok

    def test_1d_oracle(self):
        g = make_grid(1, 1025)
        u = GridFunction(g, oracles.one_phase_1d_values(g.axis, 1.0))
        gb = gradient_up_to_fb(u, K=1.0, c_lip=math.sqrt(2))
        assert gb.points > 0
        # centered differences at the kink give half the slope, elsewhere exactly sqrt(2)
        assert gb.max_gradient == pytest.approx(math.sqrt(2), rel=1e-9)
        assert gb.bound == pytest.approx(4 * math.sqrt(2) * 1.25) and gb.ok

    def test_violation_detected(self):
        g = make_grid(1, 257)
        u = GridFunction(g, 100 * np.maximum(g.axis - 0.5, 0.0))
        assert not gradient_up_to_fb(u, 1.0, 1.0).ok


class TestHolderProbe:
    def test_identity_is_linear(self):
        hp = holder_probe(_const(2, 129), (0.5, 0.5))
        assert hp.exponent == pytest.approx(1.0, abs=1e-6)

    def test_checkerboard_cross_point_below_one(self):
        f = generate_coefficients(make_grid(2, 257), "checkerboard", {"lam": 1, "Lam": 10, "tile": 0.25})
        hp = holder_probe(f, (0.5, 0.5))
        assert 0 < hp.exponent < 1
