"""Tests for the scalar envelopes and the interval bounds built on them."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convres.basis import eval_g, eval_psi, x_to_state
from convres.envelopes import (
    LineBase,
    LineIntervals,
    assemble_bounds,
    env_bilinear,
    env_quadratic,
    env_trig,
    interval_bounds_bus,
    interval_bounds_line,
    nonlinear_bounds,
)
from convres.errors import DomainError
from convres.restriction import BoxBounds, degenerate_box
from convres.selftest import random_line
from tests.conftest import CASES

TOL = 1e-9
N_SAMPLES = 100_000

finite = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


class TestQuadratic:
    def test_tight_at_base(self):
        assert env_quadratic(1.0, 1.0) == (1.0, 1.0)

    def test_value(self):
        up, lo = env_quadratic(2.0, 1.0)
        assert (lo, up) == (3.0, 4.0)

    def test_sampled(self):
        rng = np.random.default_rng(0)
        x, x0 = rng.uniform(-2, 2, (2, N_SAMPLES))
        up, lo = env_quadratic(x, x0)
        assert np.all(lo <= x * x + TOL) and np.all(x * x <= up + TOL)

    @given(x=finite, x0=finite)
    def test_property(self, x, x0):
        up, lo = env_quadratic(x, x0)
        assert lo <= x * x + TOL <= up + 2 * TOL


class TestBilinear:
    def test_tight_at_base(self):
        up, lo = env_bilinear(0.7, -1.3, 0.7, -1.3)
        assert up == pytest.approx(0.7 * -1.3) and lo == pytest.approx(0.7 * -1.3)

    def test_tightness_lines(self):
        up, lo = env_bilinear(1.0, 1.0, 0.0, 0.0)
        assert up == pytest.approx(1.0) and lo == pytest.approx(0.0)
        _, lo = env_bilinear(1.0, -1.0, 0.0, 0.0)
        assert lo == pytest.approx(-1.0)

    def test_sampled(self):
        rng = np.random.default_rng(1)
        x, y, x0, y0 = rng.uniform(-2, 2, (4, N_SAMPLES))
        up, lo = env_bilinear(x, y, x0, y0)
        assert np.all(lo <= x * y + TOL) and np.all(x * y <= up + TOL)

    @given(x=finite, y=finite, x0=finite, y0=finite,
           r1=st.floats(0.1, 10), r2=st.floats(0.1, 10))
    def test_property_any_rho(self, x, y, x0, y0, r1, r2):
        up, lo = env_bilinear(x, y, x0, y0, r1, r2)
        assert lo <= x * y + TOL and x * y <= up + TOL


class TestTrig:
    def test_origin(self):
        su, sl, cu, cl = env_trig(0.0, 1.0, -1.0)
        assert (su, sl, cu, cl) == (0.0, 0.0, 1.0, 1.0)

    def test_tight_at_window_edge(self):
        _, sl, _, _ = env_trig(math.pi / 2, math.pi / 2, -1.0)
        assert sl == pytest.approx(1.0, abs=1e-15)
        su, _, _, _ = env_trig(-1.0, 2.0, -1.0)
        assert su == pytest.approx(math.sin(-1.0), abs=1e-15)

    @pytest.mark.parametrize("theta,dp,dm", [(0.6, 0.5, -0.5), (-0.6, 0.5, -0.5)])
    def test_outside_window(self, theta, dp, dm):
        with pytest.raises(DomainError):
            env_trig(theta, dp, dm)

    @pytest.mark.parametrize("dp,dm", [(0.0, -1.0), (4.0, -1.0), (1.0, 0.0), (1.0, -4.0)])
    def test_bad_curvature(self, dp, dm):
        with pytest.raises(DomainError):
            env_trig(0.0, dp, dm)

    def test_sampled(self):
        rng = np.random.default_rng(2)
        dp = rng.uniform(1e-3, math.pi, N_SAMPLES)
        dm = -rng.uniform(1e-3, math.pi, N_SAMPLES)
        th = dm + rng.uniform(0, 1, N_SAMPLES) * (dp - dm)
        su, sl, cu, cl = env_trig(th, dp, dm)
        s, c = np.sin(th), np.cos(th)
        assert np.all(sl <= s + TOL) and np.all(s <= su + TOL)
        assert np.all(cl <= c + TOL) and np.all(c <= cu + TOL)


def _sample_line(li: LineIntervals, base: LineBase, rng, n):
    phi = rng.uniform(li.phi_lb, li.phi_ub, n)
    vf = rng.uniform(li.vf_lb, li.vf_ub, n)
    vt = rng.uniform(li.vt_lb, li.vt_ub, n)
    # include the box corners, where the extremes usually sit
    corners = np.array(np.meshgrid([li.phi_lb, li.phi_ub], [li.vf_lb, li.vf_ub], [li.vt_lb, li.vt_ub])).reshape(3, -1)
    phi, vf, vt = (np.concatenate([a, c]) for a, c in zip((phi, vf, vt), corners))
    t = phi - base.phi0
    vv = vf * vt
    return {
        "cos": np.cos(t) - 1.0,
        "sin": np.sin(t) - t,
        "vv": (vf - base.v0f) * (vt - base.v0t),
        "g_cos": vv * np.cos(t) - base.alpha_f * vf - base.alpha_t * vt,
        "g_sin": vv * np.sin(t) - base.v0f * base.v0t * phi,
        "psi_cos": vv * np.cos(t),
        "psi_sin": vv * np.sin(t),
    }


class TestLineBounds:
    def test_degenerate_at_base(self):
        base = LineBase(0.1, 1.02, 0.98, 1.0, -1.0, 0.98, 1.02)
        li = LineIntervals(0.1, 0.1, 1.02, 1.02, 0.98, 0.98)
        bd = interval_bounds_line(li, base)
        v0 = 1.02 * 0.98
        for key in ("cos", "sin", "vv"):
            assert bd[key + "_up"] == pytest.approx(0.0, abs=1e-15)
            assert bd[key + "_lo"] == pytest.approx(0.0, abs=1e-15)
        assert bd["psi_cos_up"] == pytest.approx(v0) and bd["psi_cos_lo"] == pytest.approx(v0)
        assert bd["psi_sin_up"] == pytest.approx(0.0, abs=1e-15)
        assert bd["psi_sin_lo"] == pytest.approx(0.0, abs=1e-15)
        assert bd["g_cos_up"] == pytest.approx(-v0) and bd["g_cos_lo"] == pytest.approx(-v0)
        assert bd["g_sin_up"] == pytest.approx(-v0 * 0.1)

    def test_cosine_interval(self):
        base = LineBase(0.0, 1.0, 1.0, 1.0, -1.0)
        bd = interval_bounds_line(LineIntervals(-0.2, 0.3, 1.0, 1.0, 1.0, 1.0), base)
        assert bd["cos_lo"] == pytest.approx(-0.045)
        assert bd["cos_up"] == 0.0
        grid = np.cos(np.linspace(-0.2, 0.3, 10_001)) - 1
        assert grid.min() >= bd["cos_lo"] and grid.max() <= bd["cos_up"]

    def test_window(self):
        base = LineBase(0.0, 1.0, 1.0, 0.25, -0.25)
        with pytest.raises(DomainError):
            interval_bounds_line(LineIntervals(-0.1, 0.3, 1.0, 1.0, 1.0, 1.0), base)

    def test_empty_interval(self):
        with pytest.raises(ValueError):
            interval_bounds_line(LineIntervals(0.1, 0.0, 1, 1, 1, 1), LineBase(0.0, 1.0, 1.0, 1.0, -1.0))

    def test_polytope_sampling(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            li, base = random_line(rng)
            bd = interval_bounds_line(li, base)
            for key, val in _sample_line(li, base, rng, 10_000).items():
                assert val.max() <= bd[key + "_up"] + TOL, key
                assert val.min() >= bd[key + "_lo"] - TOL, key

    def test_bounds_ordered(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            bd = interval_bounds_line(*random_line(rng))
            for key in ("cos", "sin", "vv", "g_cos", "g_sin", "psi_cos", "psi_sin"):
                assert bd[key + "_lo"] <= bd[key + "_up"]


class TestBusBounds:
    def test_degenerate(self):
        assert interval_bounds_bus(1.0, 1.0, 1.0) == (-1.0, -1.0, 1.0, 1.0)

    def test_interval(self):
        g_up, g_lo, p_up, p_lo = interval_bounds_bus(0.95, 1.05, 1.0)
        assert g_up == pytest.approx(-0.9975)
        assert g_lo == -1.0
        assert p_up == pytest.approx(1.05 ** 2)
        assert p_lo == pytest.approx(0.9)

    def test_empty(self):
        with pytest.raises(ValueError):
            interval_bounds_bus(1.1, 1.0, 1.0)

    @settings(max_examples=200)
    @given(v0=st.floats(0.8, 1.2), lo=st.floats(0.0, 0.3), hi=st.floats(0.0, 0.3))
    def test_sampled(self, v0, lo, hi):
        v_lb, v_ub = v0 - lo, v0 + hi
        g_up, g_lo, p_up, p_lo = interval_bounds_bus(v_lb, v_ub, v0)
        v = np.linspace(v_lb, v_ub, 1001)
        assert np.all(v * v - 2 * v0 * v <= g_up + 1e-12)
        assert np.all(v * v - 2 * v0 * v >= g_lo - 1e-12)
        assert np.all(v * v <= p_up + 1e-12) and np.all(v * v >= p_lo - 1e-12)


def _random_box(model, rng, scale):
    return model.b_hat + rng.uniform(0, scale, model.b_hat.shape) * rng.uniform(0, 1)


def _sample_box(model, b, rng, n):
    """States whose angle differences and PQ magnitudes lie in the box."""
    box = BoxBounds.unpack(b, model.layout)
    idx = model.idx
    out = []
    while len(out) < n:
        x = np.concatenate([
            model.x0[: len(idx.ns)] + rng.uniform(-0.3, 0.3, len(idx.ns)),
            rng.uniform(box.v_lb, box.v_ub),
        ])
        # shrink the angle step until every line difference is inside its interval
        for _ in range(20):
            ax = model.a_mat @ x
            if np.all(ax <= b + 1e-12):
                out.append(x.copy())
                break
            x[: len(idx.ns)] = model.x0[: len(idx.ns)] + 0.5 * (x[: len(idx.ns)] - model.x0[: len(idx.ns)])
    return out


class TestAssembled:
    @pytest.mark.parametrize("name", CASES)
    def test_degenerate_box_is_exact(self, studies, name):
        s = studies[name]
        bv = assemble_bounds(s.u0, degenerate_box(s.model), s.model)
        g = eval_g(s.base, s.u0, s.model)
        np.testing.assert_allclose(bv.g_up, g, atol=1e-12)
        np.testing.assert_allclose(bv.g_lo, g, atol=1e-12)
        psi = eval_psi(s.base, s.u0, s.model.pa, s.idx)
        np.testing.assert_allclose(bv.psi_up, psi, atol=1e-12)
        np.testing.assert_allclose(bv.psi_lo, psi, atol=1e-12)

    @pytest.mark.parametrize("name", CASES)
    def test_enclosure_by_sampling(self, studies, name):
        s = studies[name]
        m = s.model
        rng = np.random.default_rng(6)
        for _ in range(5):
            b = _random_box(m, rng, 0.2)
            bv = assemble_bounds(s.u0, b, m)
            assert np.all(bv.g_lo <= bv.g_up) and np.all(bv.psi_lo <= bv.psi_up)
            for x in _sample_box(m, b, rng, 200):
                st_ = x_to_state(x, s.idx, s.u0)
                g = eval_g(st_, s.u0, m)
                psi = eval_psi(st_, s.u0, m.pa, s.idx)
                assert np.all(g <= bv.g_up + TOL) and np.all(g >= bv.g_lo - TOL)
                assert np.all(psi <= bv.psi_up + TOL) and np.all(psi >= bv.psi_lo - TOL)

    @pytest.mark.parametrize("name", CASES)
    def test_monotone_in_box(self, studies, name):
        m = studies[name].model
        rng = np.random.default_rng(7)
        for _ in range(100):
            b = _random_box(m, rng, 0.2)
            b2 = b + rng.uniform(0, 0.1, b.shape)
            lo, hi = nonlinear_bounds(b, m), nonlinear_bounds(b2, m)
            assert np.all(hi[0] >= lo[0] - 1e-15) and np.all(hi[2] >= lo[2] - 1e-15)
            assert np.all(hi[1] <= lo[1] + 1e-15) and np.all(hi[3] <= lo[3] + 1e-15)

    @pytest.mark.parametrize("name", CASES)
    def test_midpoint_convexity(self, studies, name):
        m = studies[name].model
        rng = np.random.default_rng(8)
        for _ in range(200):
            b1, b2 = _random_box(m, rng, 0.3), _random_box(m, rng, 0.3)
            B1, B2, Bm = (nonlinear_bounds(b, m) for b in (b1, b2, 0.5 * (b1 + b2)))
            # upper bounds convex, lower bounds concave in b
            for k, sign in enumerate((1, -1, 1, -1)):
                assert np.all(sign * (Bm[k] - 0.5 * (B1[k] + B2[k])) <= 1e-12)

    def test_window_violation(self, studies):
        m = studies["case9"].model
        b = m.b_hat.copy()
        b[0] = m.lines.phi0[0] + m.lines.delta_plus[0] + 0.1
        with pytest.raises(DomainError):
            nonlinear_bounds(b, m)

    def test_empty_box(self, studies):
        m = studies["case9"].model
        b = m.b_hat.copy()
        b[0] -= 0.1
        with pytest.raises(DomainError):
            nonlinear_bounds(b, m)
