"""Tests for base-point linearization: psi, g, M, L, A, K."""

import math

import numpy as np
import pytest

from convres.basis import (
    ModelOptions,
    basis_jacobian,
    build_model,
    eval_g,
    eval_psi,
    layout_of,
    phase_adjust,
    state_to_x,
    x_to_state,
)
from convres.errors import InfeasibleBase, SingularJacobian
from convres.matpower_io import parse_case
from convres.network import build_admittance, build_index_maps
from convres.powerflow import (
    PolarState,
    base_control,
    flat_start,
    injections,
    mismatch,
    nr_solve,
    pf_jacobian,
)
from convres.selftest import random_states
from tests.conftest import CASES, two_bus_text


def solved(case):
    idx = build_index_maps(case)
    adm = build_admittance(case)
    u = base_control(case, idx)
    return idx, adm, u, nr_solve(case, adm, idx, u)


class TestPhaseAdjust:
    def test_zero_angles_give_raw_admittance(self, cases):
        case = cases["case9"]
        idx, adm, u, _ = solved(case)
        pa = phase_adjust(case, adm, idx, flat_start(case, idx, u))
        for l, (f, t) in enumerate(idx.lines):
            assert pa.g_c[f, l] == pytest.approx(adm.g[f, t])
            assert pa.b_s[f, l] == pytest.approx(adm.b[f, t])
            assert pa.b_c[f, l] == pytest.approx(adm.b[f, t])
            assert pa.g_s[f, l] == pytest.approx(adm.g[f, t])

    @pytest.mark.parametrize("name", CASES)
    def test_column_support(self, studies, name):
        pa, idx = studies[name].model.pa, studies[name].idx
        for mat in (pa.g_c, pa.g_s, pa.b_c, pa.b_s):
            mask = np.zeros_like(mat, dtype=bool)
            cols = np.arange(idx.n_line)
            mask[idx.lines[:, 0], cols] = True
            mask[idx.lines[:, 1], cols] = True
            assert not np.any(mat[~mask])

    @pytest.mark.parametrize("name", CASES)
    def test_reconstruction(self, studies, name):
        s = studies[name]
        pa, lay = s.model.pa, s.model.layout
        rng = np.random.default_rng(11)
        for st in random_states(s.base, s.idx, rng, 100):
            psi = eval_psi(st, s.u0, pa, s.idx)
            c, sn, sq = psi[lay.cos], psi[lay.sin], psi[lay.sq]
            p, q = injections(st, s.adm)
            np.testing.assert_allclose(pa.g_c @ c + pa.b_s @ sn + pa.g_diag * sq, p, atol=1e-10)
            np.testing.assert_allclose(pa.g_s @ sn - pa.b_c @ c - pa.b_diag * sq, q, atol=1e-10)

    def test_two_bus_rotated(self):
        case = parse_case(two_bus_text(load_mw=99.3))
        idx, adm, u, base = solved(case)
        pa = phase_adjust(case, adm, idx, base)
        assert pa.phi0[0] == pytest.approx(-base.va[1])
        rng = np.random.default_rng(0)
        for st in random_states(base, idx, rng, 100):
            lay = layout_of(idx)
            psi = eval_psi(st, u, pa, idx)
            p, _ = injections(st, adm)
            assert pa.g_c[1] @ psi[lay.cos] + pa.b_s[1] @ psi[lay.sin] == pytest.approx(p[1], abs=1e-12)


class TestPsi:
    @pytest.mark.parametrize("name", CASES)
    def test_at_base(self, studies, name):
        s = studies[name]
        lay = s.model.layout
        psi = eval_psi(s.base, s.u0, s.model.pa, s.idx)
        f, t = s.idx.lines[:, 0], s.idx.lines[:, 1]
        np.testing.assert_allclose(psi[lay.cos], s.base.vm[f] * s.base.vm[t], atol=1e-14)
        np.testing.assert_allclose(psi[lay.sin], 0.0, atol=1e-14)
        np.testing.assert_allclose(psi[lay.sq], s.base.vm ** 2, atol=1e-14)
        assert np.max(np.abs(s.model.m_mat @ psi)) < 1e-9

    def test_two_bus_value(self, two_bus):
        idx = build_index_maps(two_bus)
        adm = build_admittance(two_bus)
        u = base_control(two_bus, idx)
        pa = phase_adjust(two_bus, adm, idx, flat_start(two_bus, idx, u))
        st = PolarState(np.array([0.0, -0.2]), np.array([1.0, 0.9]))
        psi = eval_psi(st, u, pa, idx)
        assert psi[layout_of(idx).cos][0] == pytest.approx(0.9 * math.cos(0.2), abs=1e-14)

    @pytest.mark.parametrize("name", CASES)
    def test_m_psi_is_mismatch(self, studies, name):
        s = studies[name]
        rng = np.random.default_rng(5)
        for st in random_states(s.base, s.idx, rng, 100):
            u = s.u0.with_p(s.u0.p_ns + rng.normal(0, 0.2, len(s.u0.p_ns)))
            psi = eval_psi(st, u, s.model.pa, s.idx)
            np.testing.assert_allclose(s.model.m_mat @ psi, mismatch(st, s.adm, s.idx, u), atol=1e-10)


class TestResidual:
    @pytest.mark.parametrize("name", CASES)
    def test_at_base(self, studies, name):
        s = studies[name]
        m, lay, ln = s.model, s.model.layout, s.model.lines
        g = eval_g(s.base, s.u0, m)
        v0 = ln.v0f * ln.v0t
        both_free = (ln.f_pq < lay.n_pq) & (ln.t_pq < lay.n_pq)
        np.testing.assert_allclose(g[lay.cos][both_free], -v0[both_free], atol=1e-14)
        np.testing.assert_allclose(g[lay.sin], -v0 * ln.phi0, atol=1e-14)
        sq = g[lay.sq]
        np.testing.assert_allclose(sq[s.idx.pq], -s.base.vm[s.idx.pq] ** 2, atol=1e-14)

    def test_square_residual(self, studies):
        s = studies["case9"]
        pq = s.idx.pq[0]
        st = s.base.copy()
        st.vm[pq] += 0.03
        g = eval_g(st, s.u0, s.model)
        v0 = s.base.vm[pq]
        assert g[s.model.layout.sq][pq] == pytest.approx(0.03 ** 2 - v0 ** 2, abs=1e-14)

    @pytest.mark.parametrize("name", CASES)
    def test_linear_plus_residual(self, studies, name):
        s = studies[name]
        m = s.model
        rng = np.random.default_rng(9)
        for st in random_states(s.base, s.idx, rng, 100):
            u = s.u0.with_p(s.u0.p_ns + rng.normal(0, 0.2, len(s.u0.p_ns)))
            f = mismatch(st, s.adm, s.idx, u)
            rec = m.j_f0 @ state_to_x(st, s.idx) + m.m_mat @ eval_g(st, u, m)
            assert np.max(np.abs(rec - f)) <= 1e-10

    @pytest.mark.parametrize("name", CASES)
    def test_residual_matches_definition(self, studies, name):
        s = studies[name]
        m = s.model
        rng = np.random.default_rng(2)
        for st in random_states(s.base, s.idx, rng, 20):
            psi = eval_psi(st, s.u0, m.pa, s.idx)
            g = eval_g(st, s.u0, m)
            # any offset between the two forms must be constant and invisible to M
            diff = psi - m.j_psi0 @ state_to_x(st, s.idx) - g
            diff0 = eval_psi(s.base, s.u0, m.pa, s.idx) - m.j_psi0 @ m.x0 - eval_g(s.base, s.u0, m)
            np.testing.assert_allclose(diff, diff0, atol=1e-10)
            assert np.max(np.abs(m.m_mat @ diff)) < 1e-10


class TestBasisJacobian:
    @pytest.mark.parametrize("name", CASES)
    def test_finite_differences(self, studies, name):
        s = studies[name]
        m = s.model
        x0 = m.x0
        h = 1e-6
        fd = np.empty_like(m.j_psi0)
        for k in range(len(x0)):
            xp, xm = x0.copy(), x0.copy()
            xp[k] += h
            xm[k] -= h
            fd[:, k] = (
                eval_psi(x_to_state(xp, s.idx, s.u0), s.u0, m.pa, s.idx)
                - eval_psi(x_to_state(xm, s.idx, s.u0), s.u0, m.pa, s.idx)
            ) / (2 * h)
        np.testing.assert_allclose(m.j_psi0, fd, atol=1e-7)

    @pytest.mark.parametrize("name", CASES)
    def test_matches_power_flow_jacobian(self, studies, name):
        s = studies[name]
        np.testing.assert_allclose(s.model.j_f0, -pf_jacobian(s.base, s.adm, s.idx), atol=1e-8)

    def test_two_bus_sin_row(self, two_bus):
        idx = build_index_maps(two_bus)
        adm = build_admittance(two_bus)
        flat = flat_start(two_bus, idx, base_control(two_bus, idx))
        jac = basis_jacobian(flat, phase_adjust(two_bus, adm, idx, flat), idx)
        lay = layout_of(idx)
        assert jac[lay.sin][0].tolist() == [-1.0, 0.0]
        assert jac[lay.cos][0].tolist() == [0.0, 1.0]

    def test_pv_pv_line_row_is_zero(self, studies):
        s = studies["case30"]
        lay = s.model.layout
        pv = set(s.idx.pv.tolist()) | {s.idx.slack}
        rows = [l for l, (f, t) in enumerate(s.idx.lines) if f in pv and t in pv]
        assert rows
        assert not np.any(s.model.j_psi0[lay.cos][rows])


class TestBuildModel:
    @pytest.mark.parametrize("name", CASES)
    def test_k_split(self, studies, name):
        m = studies[name].model
        np.testing.assert_array_equal(m.k_plus + m.k_minus, m.k_mat)
        assert np.all(m.k_plus >= 0) and np.all(m.k_minus <= 0)
        assert not np.any(m.k_plus * m.k_minus)
        assert np.all(np.isfinite(m.k_mat))

    @pytest.mark.parametrize("name", CASES)
    def test_shapes(self, studies, name):
        s = studies[name]
        n_ns, n_pq, m, n = len(s.idx.ns), len(s.idx.pq), s.idx.n_line, s.idx.n_bus
        p, q = 2 * m + 2 * n_pq, n_ns + n_pq + 2 * m + n
        assert s.model.k_mat.shape == (p, q)
        assert s.model.m_mat.shape == (n_ns + n_pq, q)
        assert s.model.a_mat.shape == (p, n_ns + n_pq)
        assert s.model.l_mat.shape == (2 * (len(s.idx.pv) + 1), q)

    def test_case9_rows(self, case9_study):
        assert case9_study.model.k_mat.shape[0] == 2 * 9 + 2 * 6

    def test_two_bus_a_and_bmax(self, two_bus):
        idx, adm, u, base = solved(two_bus)
        m = build_model(two_bus, adm, idx, base, u)
        np.testing.assert_array_equal(m.a_mat, [[-1, 0], [0, 1], [1, 0], [0, -1]])
        np.testing.assert_allclose(m.b_max, [2 * math.pi, 1.1, 2 * math.pi, -0.9])

    def test_a_x_is_angle_difference(self, studies):
        s = studies["case14"]
        ax = s.model.a_mat @ state_to_x(s.base, s.idx)
        f, t = s.idx.lines[:, 0], s.idx.lines[:, 1]
        np.testing.assert_allclose(ax[: s.idx.n_line], s.base.va[f] - s.base.va[t], atol=1e-14)

    @pytest.mark.parametrize("name", CASES)
    def test_reactive_rows(self, studies, name):
        s = studies[name]
        m = s.model
        psi = eval_psi(s.base, s.u0, m.pa, s.idx)
        _, q = injections(s.base, s.adm)
        k = len(m.l_buses)
        np.testing.assert_allclose(m.l_mat @ psi, np.concatenate([q[m.l_buses], -q[m.l_buses]]), atol=1e-10)
        assert np.all(m.d - m.l_mat @ psi >= 0)
        assert k == len(s.idx.pv) + 1

    def test_pv_only_option(self, studies):
        s = studies["case9"]
        m = build_model(s.case, s.adm, s.idx, s.base, s.u0, ModelOptions(slack_q_limits=False))
        assert m.l_mat.shape[0] == 2 * len(s.idx.pv)

    def test_curvature_window(self, studies):
        ln = studies["case9"].model.lines
        assert np.all((ln.delta_plus > 0) & (ln.delta_plus <= math.pi))
        assert np.all((ln.delta_minus < 0) & (ln.delta_minus >= -math.pi))

    def test_infeasible_base(self, cases):
        case = cases["case14"]
        idx, adm, u, base = solved(case)
        with pytest.raises(InfeasibleBase):
            build_model(case, adm, idx, base, u)

    def test_unsolved_base(self, cases):
        case = cases["case9"]
        idx, adm, u, base = solved(case)
        with pytest.raises(InfeasibleBase, match="mismatch"):
            build_model(case, adm, idx, flat_start(case, idx, u), u)

    def test_singular_jacobian_at_nose(self):
        case = parse_case(two_bus_text(load_mw=500))
        idx = build_index_maps(case)
        adm = build_admittance(case)
        nose = PolarState(np.array([0.0, -math.pi / 4]), np.array([1.0, math.cos(math.pi / 4)]))
        u = base_control(case, idx)
        p, q = injections(nose, adm)
        u = u.with_p(p[idx.ns])
        with pytest.raises(SingularJacobian):
            build_model(case, adm, idx, nose, u, ModelOptions(check_base=False))

    def test_state_round_trip(self, studies):
        s = studies["case39"]
        back = x_to_state(state_to_x(s.base, s.idx), s.idx, s.u0)
        np.testing.assert_allclose(back.va, s.base.va, atol=1e-15)
        np.testing.assert_array_equal(back.vm, s.base.vm)
