"""Sampling checks behind ``convres selftest``.

Each check compares a bound or identity against direct evaluation on random
samples and returns a :class:`CheckResult`; nothing here is used by the
certification path itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from convres.basis import build_model, eval_g, eval_psi, state_to_x
from convres.envelopes import (
    LineBase,
    LineIntervals,
    env_bilinear,
    env_quadratic,
    env_trig,
    interval_bounds_bus,
    interval_bounds_line,
)
from convres.matpower_io import NetworkCase
from convres.network import build_admittance, build_index_maps
from convres.powerflow import PolarState, base_control, injections, mismatch, nr_solve, pf_jacobian
from convres.basis import ModelOptions, phase_adjust

SLACK_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_envelopes(rng: np.random.Generator, n: int) -> list[CheckResult]:
    """Quadratic, bilinear and trigonometric envelopes on ``n`` samples each."""
    out = []
    x, x0 = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    up, lo = env_quadratic(x, x0)
    bad = int(np.sum((x * x > up + SLACK_TOL) | (x * x < lo - SLACK_TOL)))
    out.append(CheckResult("envelope quadratic", bad == 0, f"{bad} violations in {n}"))

    x, y = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    x0, y0 = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    r1, r2 = rng.uniform(0.2, 5, n), rng.uniform(0.2, 5, n)
    up, lo = env_bilinear(x, y, x0, y0, r1, r2)
    bad = int(np.sum((x * y > up + SLACK_TOL) | (x * y < lo - SLACK_TOL)))
    out.append(CheckResult("envelope bilinear", bad == 0, f"{bad} violations in {n}"))

    dp = rng.uniform(1e-3, np.pi, n)
    dm = -rng.uniform(1e-3, np.pi, n)
    th = dm + rng.uniform(0, 1, n) * (dp - dm)
    su, sl, cu, cl = env_trig(th, dp, dm)
    s, c = np.sin(th), np.cos(th)
    bad = int(np.sum((s > su + SLACK_TOL) | (s < sl - SLACK_TOL) | (c > cu + SLACK_TOL) | (c < cl - SLACK_TOL)))
    out.append(CheckResult("envelope trigonometric", bad == 0, f"{bad} violations in {n}"))
    return out


def random_line(rng: np.random.Generator) -> tuple[LineIntervals, LineBase]:
    """A random line base point and a box around it; either end may be fixed."""
    phi0 = rng.uniform(-0.6, 0.6)
    v0f, v0t = rng.uniform(0.9, 1.1, 2)
    dp = rng.uniform(0.05, np.pi)
    dm = -rng.uniform(0.05, np.pi)
    lo = phi0 + rng.uniform(dm, 0)
    hi = phi0 + rng.uniform(0, dp)
    free_f, free_t = rng.random(2) < 0.7
    wf = rng.uniform(0, 0.15, 2) if free_f else np.zeros(2)
    wt = rng.uniform(0, 0.15, 2) if free_t else np.zeros(2)
    li = LineIntervals(lo, hi, v0f - wf[0], v0f + wf[1], v0t - wt[0], v0t + wt[1])
    base = LineBase(phi0, v0f, v0t, dp, dm, v0t if free_f else 0.0, v0f if free_t else 0.0)
    return li, base


def check_interval_bounds(rng: np.random.Generator, n_lines: int, n_samples: int) -> list[CheckResult]:
    """Line and bus interval bounds against samples drawn inside each box."""
    viol = {k: 0 for k in ("g_cos", "g_sin", "psi_cos", "psi_sin", "g_sq", "psi_sq")}
    for _ in range(n_lines):
        li, base = random_line(rng)
        bd = interval_bounds_line(li, base)
        phi = rng.uniform(li.phi_lb, li.phi_ub, n_samples)
        vf = rng.uniform(li.vf_lb, li.vf_ub, n_samples)
        vt = rng.uniform(li.vt_lb, li.vt_ub, n_samples)
        vv = vf * vt
        dphi = phi - base.phi0
        pc, ps = vv * np.cos(dphi), vv * np.sin(dphi)
        gc = pc - base.alpha_f * vf - base.alpha_t * vt
        gs = ps - base.v0f * base.v0t * phi
        for key, val in (("g_cos", gc), ("g_sin", gs), ("psi_cos", pc), ("psi_sin", ps)):
            viol[key] += int(np.sum((val > bd[key + "_up"] + SLACK_TOL) | (val < bd[key + "_lo"] - SLACK_TOL)))
        v0 = rng.uniform(0.9, 1.1)
        v_lb, v_ub = v0 - rng.uniform(0, 0.2), v0 + rng.uniform(0, 0.2)
        g_up, g_lo, p_up, p_lo = interval_bounds_bus(v_lb, v_ub, v0)
        v = rng.uniform(v_lb, v_ub, n_samples)
        gq, pq = v * v - 2 * v0 * v, v * v
        viol["g_sq"] += int(np.sum((gq > g_up + SLACK_TOL) | (gq < g_lo - SLACK_TOL)))
        viol["psi_sq"] += int(np.sum((pq > p_up + SLACK_TOL) | (pq < p_lo - SLACK_TOL)))
    return [
        CheckResult(f"interval bound {k}", n == 0, f"{n} violations over {n_lines} lines x {n_samples}")
        for k, n in viol.items()
    ]


def random_states(base: PolarState, idx, rng: np.random.Generator, n: int, spread: float = 0.2):
    for _ in range(n):
        va = base.va.copy()
        vm = base.vm.copy()
        va[idx.ns] += rng.uniform(-spread, spread, len(idx.ns))
        vm[idx.pq] += rng.uniform(-spread / 2, spread / 2, len(idx.pq))
        yield PolarState(va, vm)


def check_identities(case: NetworkCase, rng: np.random.Generator, n_states: int = 100) -> list[CheckResult]:
    """Linear-plus-residual reconstruction and the phase-adjusted injections."""
    idx = build_index_maps(case)
    adm = build_admittance(case)
    u0 = base_control(case, idx)
    base = nr_solve(case, adm, idx, u0)
    model = build_model(case, adm, idx, base, u0, ModelOptions(check_base=False))
    pa = phase_adjust(case, adm, idx, base)
    err_f = err_pa = 0.0
    for st in random_states(base, idx, rng, n_states):
        u = u0.with_p(u0.p_ns + rng.uniform(-0.5, 0.5, len(idx.ns)))
        f = mismatch(st, adm, idx, u)
        x = state_to_x(st, idx)
        rec = model.j_f0 @ x + model.m_mat @ eval_g(st, u, model)
        err_f = max(err_f, float(np.max(np.abs(rec - f))))
        p, q = injections(st, adm)
        psi = eval_psi(st, u, pa, model.idx)
        lay = model.layout
        c, s, sq = psi[lay.cos], psi[lay.sin], psi[lay.sq]
        p_pa = pa.g_c @ c + pa.b_s @ s + pa.g_diag * sq
        q_pa = pa.g_s @ s - pa.b_c @ c - pa.b_diag * sq
        err_pa = max(err_pa, float(np.max(np.abs(p_pa - p))), float(np.max(np.abs(q_pa - q))))
    return [
        CheckResult("identity linear plus residual", err_f <= 1e-10, f"max error {err_f:.3g}"),
        CheckResult("identity phase-adjusted injections", err_pa <= 1e-10, f"max error {err_pa:.3g}"),
    ]


def fd_jacobian(state: PolarState, adm, idx, h: float = 1e-6) -> np.ndarray:
    """Central differences of computed [p_ns; q_pq] w.r.t. [va_ns; vm_pq]."""
    def calc(st):
        p, q = injections(st, adm)
        return np.concatenate([p[idx.ns], q[idx.pq]])

    cols = [("va", int(i)) for i in idx.ns] + [("vm", int(i)) for i in idx.pq]
    jac = np.empty((len(cols), len(cols)))
    for k, (kind, i) in enumerate(cols):
        plus, minus = state.copy(), state.copy()
        getattr(plus, kind)[i] += h
        getattr(minus, kind)[i] -= h
        jac[:, k] = (calc(plus) - calc(minus)) / (2 * h)
    return jac


def check_jacobian(case: NetworkCase, rng: np.random.Generator, n_states: int = 5) -> CheckResult:
    idx = build_index_maps(case)
    adm = build_admittance(case)
    base = nr_solve(case, adm, idx, base_control(case, idx))
    worst = 0.0
    for st in random_states(base, idx, rng, n_states):
        jac = pf_jacobian(st, adm, idx)
        jac = jac.toarray() if hasattr(jac, "toarray") else jac
        fd = fd_jacobian(st, adm, idx)
        worst = max(worst, float(np.linalg.norm(jac - fd) / np.linalg.norm(fd)))
    return CheckResult("jacobian vs finite differences", worst <= 1e-5, f"relative error {worst:.3g}")


def run_all(case: NetworkCase, seed: int = 0, samples: int = 100_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = check_envelopes(rng, samples)
    out += check_interval_bounds(rng, 50, max(1, samples // 10))
    out += check_identities(case, rng)
    out.append(check_jacobian(case, rng))
    return out
