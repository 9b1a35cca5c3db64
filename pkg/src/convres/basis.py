"""Base-point linearization: basis functions, residuals and the K matrix.

Column order of the basis vector psi (and of M, L, K) is

    [p_ns | q_pq | vf*vt*cos(dphi) per line | vf*vt*sin(dphi) per line | v**2 per bus]

where ``dphi = phi - phi0``. The state is ``x = [theta_ns - theta_slack; v_pq]``;
measuring angles from the slack makes ``E_ns^T x_theta`` equal the true
angle differences, so the box ``A x <= b`` reads directly as angle and
voltage limits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from convres.envelopes import sin_curvature
from convres.errors import InfeasibleBase, SingularJacobian
from convres.matpower_io import NetworkCase
from convres.network import Admittance, IndexMaps, branch_admittances, build_incidence
from convres.powerflow import ControlVector, PolarState, check_operational, mismatch

log = logging.getLogger(__name__)

RCOND_MIN = 1e-12
DELTA_EPS = 1e-6


@dataclass(frozen=True)
class Layout:
    n_ns: int
    n_pq: int
    n_line: int
    n_bus: int

    @property
    def n_inj(self) -> int:
        return self.n_ns + self.n_pq

    @property
    def q(self) -> int:
        return self.n_ns + self.n_pq + 2 * self.n_line + self.n_bus

    @property
    def p(self) -> int:
        return 2 * self.n_line + 2 * self.n_pq

    @property
    def n_state(self) -> int:
        return self.n_ns + self.n_pq

    @property
    def cos(self) -> slice:
        return slice(self.n_inj, self.n_inj + self.n_line)

    @property
    def sin(self) -> slice:
        return slice(self.n_inj + self.n_line, self.n_inj + 2 * self.n_line)

    @property
    def sq(self) -> slice:
        return slice(self.n_inj + 2 * self.n_line, self.q)


@dataclass(frozen=True)
class PhaseAdjusted:
    """Per-line coefficients of the injections after rotating by the base angles.

    With ``C = vf*vt*cos(dphi)`` and ``S = vf*vt*sin(dphi)`` per line::

        p = g_c @ C + b_s @ S + g_diag * v**2
        q = g_s @ S - b_c @ C - b_diag * v**2
    """

    g_c: np.ndarray
    g_s: np.ndarray
    b_c: np.ndarray
    b_s: np.ndarray
    g_diag: np.ndarray
    b_diag: np.ndarray
    phi0: np.ndarray


@dataclass(frozen=True)
class LineData:
    phi0: np.ndarray
    v0f: np.ndarray
    v0t: np.ndarray
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    a_up: np.ndarray
    a_lo: np.ndarray
    alpha_f: np.ndarray
    alpha_t: np.ndarray
    f_pq: np.ndarray  # position of the from bus among PQ buses, n_pq if fixed
    t_pq: np.ndarray


@dataclass(frozen=True)
class ModelOptions:
    """Knobs of :func:`build_model`.

    ``slack_q_limits`` adds the slack generator's reactive limits to the
    certified inequalities; without them a certificate says nothing about
    the slack's reactive output.
    """

    reactive_limits: bool = True
    slack_q_limits: bool = True
    check_base: bool = True
    base_tol: float = 1e-8


@dataclass(frozen=True)
class RestrictionModel:
    layout: Layout
    idx: IndexMaps
    pa: PhaseAdjusted
    m_mat: np.ndarray
    l_mat: np.ndarray
    a_mat: np.ndarray
    b_max: np.ndarray
    d: np.ndarray
    j_psi0: np.ndarray
    j_f0: np.ndarray
    k_mat: np.ndarray
    k_plus: np.ndarray
    k_minus: np.ndarray
    l_plus: np.ndarray
    l_minus: np.ndarray
    base_state: PolarState
    base_u: ControlVector
    x0: np.ndarray
    b_hat: np.ndarray
    lines: LineData
    pq: np.ndarray
    v0_pq: np.ndarray
    v0_sq: np.ndarray
    l_buses: np.ndarray = field(repr=False)
    rcond: float = 0.0

    @property
    def k_inj(self) -> np.ndarray:
        return self.k_mat[:, : self.layout.n_inj]


def phase_adjust(case: NetworkCase, adm: Admittance, idx: IndexMaps, base: PolarState) -> PhaseAdjusted:
    """Rotate every branch's off-diagonal admittance by its base angle difference.

    Diagonals come from ``adm``; off-diagonals are taken per branch so that
    parallel branches keep separate columns.
    """
    ba = branch_admittances(case)
    f, t = idx.lines[:, 0], idx.lines[:, 1]
    n, m = idx.n_bus, idx.n_line
    phi0 = base.va[f] - base.va[t]
    c, s = np.cos(phi0), np.sin(phi0)
    gft, bft = ba.ft.real, ba.ft.imag
    gtf, btf = ba.tf.real, ba.tf.imag
    cols = np.arange(m)
    g_c = np.zeros((n, m))
    b_s = np.zeros((n, m))
    g_s = np.zeros((n, m))
    b_c = np.zeros((n, m))
    # from end: angle difference +phi
    g_c[f, cols] = gft * c + bft * s
    b_s[f, cols] = bft * c - gft * s
    g_s[f, cols] = gft * c + bft * s
    b_c[f, cols] = -(gft * s - bft * c)
    # to end: angle difference -phi
    g_c[t, cols] = gtf * c - btf * s
    b_s[t, cols] = -gtf * s - btf * c
    g_s[t, cols] = -gtf * c + btf * s
    b_c[t, cols] = gtf * s + btf * c
    diag = adm.diagonal()
    return PhaseAdjusted(g_c, g_s, b_c, b_s, diag.real.copy(), diag.imag.copy(), phi0)


def layout_of(idx: IndexMaps) -> Layout:
    return Layout(len(idx.ns), len(idx.pq), idx.n_line, idx.n_bus)


def state_to_x(state: PolarState, idx: IndexMaps) -> np.ndarray:
    return np.concatenate([state.va[idx.ns] - state.va[idx.slack], state.vm[idx.pq]])


def x_to_state(x: np.ndarray, idx: IndexMaps, u: ControlVector) -> PolarState:
    n_ns = len(idx.ns)
    va = np.full(idx.n_bus, u.slack_va)
    va[idx.ns] = x[:n_ns] + u.slack_va
    vm = np.empty(idx.n_bus)
    vm[idx.slack] = u.slack_vm
    vm[idx.pv] = u.v_pv
    vm[idx.pq] = x[n_ns:]
    return PolarState(va, vm)


def eval_psi(state: PolarState, u: ControlVector, pa: PhaseAdjusted, idx: IndexMaps) -> np.ndarray:
    f, t = idx.lines[:, 0], idx.lines[:, 1]
    dphi = state.va[f] - state.va[t] - pa.phi0
    vv = state.vm[f] * state.vm[t]
    return np.concatenate(
        [u.p_ns, u.q_pq, vv * np.cos(dphi), vv * np.sin(dphi), state.vm ** 2]
    )


def basis_jacobian(base: PolarState, pa: PhaseAdjusted, idx: IndexMaps) -> np.ndarray:
    """Analytic d psi / d x at the base point (dphi = 0 there)."""
    lay = layout_of(idx)
    jac = np.zeros((lay.q, lay.n_state))
    ns_pos = np.full(idx.n_bus, -1)
    ns_pos[idx.ns] = np.arange(lay.n_ns)
    pq_pos = np.full(idx.n_bus, -1)
    pq_pos[idx.pq] = np.arange(lay.n_pq)
    v0 = base.vm
    for l, (f, t) in enumerate(idx.lines):
        rc = lay.cos.start + l
        rs = lay.sin.start + l
        if pq_pos[f] >= 0:
            jac[rc, lay.n_ns + pq_pos[f]] += v0[t]
        if pq_pos[t] >= 0:
            jac[rc, lay.n_ns + pq_pos[t]] += v0[f]
        vv0 = v0[f] * v0[t]
        if ns_pos[f] >= 0:
            jac[rs, ns_pos[f]] += vv0
        if ns_pos[t] >= 0:
            jac[rs, ns_pos[t]] -= vv0
    for k, i in enumerate(idx.pq):
        jac[lay.sq.start + i, lay.n_ns + k] = 2.0 * v0[i]
    return jac


def build_m(pa: PhaseAdjusted, idx: IndexMaps) -> np.ndarray:
    """Equality map: ``M @ psi`` is specified minus computed injection."""
    lay = layout_of(idx)
    ns, pq = idx.ns, idx.pq
    top = np.hstack([
        np.eye(lay.n_ns),
        np.zeros((lay.n_ns, lay.n_pq)),
        -pa.g_c[ns],
        -pa.b_s[ns],
        -np.diag(pa.g_diag)[ns],
    ])
    bot = np.hstack([
        np.zeros((lay.n_pq, lay.n_ns)),
        np.eye(lay.n_pq),
        pa.b_c[pq],
        -pa.g_s[pq],
        np.diag(pa.b_diag)[pq],
    ])
    return np.vstack([top, bot])


def build_l(pa: PhaseAdjusted, idx: IndexMaps, buses: np.ndarray) -> np.ndarray:
    """Rows ``[q(buses); -q(buses)]`` of computed reactive injection."""
    lay = layout_of(idx)
    q_rows = np.hstack([
        np.zeros((len(buses), lay.n_inj)),
        -pa.b_c[buses],
        pa.g_s[buses],
        -np.diag(pa.b_diag)[buses],
    ])
    return np.vstack([q_rows, -q_rows])


def build_a(case: NetworkCase, idx: IndexMaps) -> np.ndarray:
    lay = layout_of(idx)
    inc = build_incidence(case, idx)
    et = inc.e_ns.T.astype(float)
    z_lp = np.zeros((lay.n_line, lay.n_pq))
    z_pn = np.zeros((lay.n_pq, lay.n_ns))
    eye = np.eye(lay.n_pq)
    return np.vstack([
        np.hstack([et, z_lp]),
        np.hstack([z_pn, eye]),
        np.hstack([-et, z_lp]),
        np.hstack([z_pn, -eye]),
    ])


def _line_data(case: NetworkCase, idx: IndexMaps, base: PolarState, phi0: np.ndarray) -> LineData:
    f, t = idx.lines[:, 0], idx.lines[:, 1]
    n_pq = len(idx.pq)
    pq_pos = np.full(idx.n_bus, n_pq)
    pq_pos[idx.pq] = np.arange(n_pq)
    f_pq, t_pq = pq_pos[f], pq_pos[t]
    amax = np.array([br.ang_max for br in case.branches])
    amin = np.array([br.ang_min for br in case.branches])
    dp = np.clip(amax - phi0, DELTA_EPS, np.pi - DELTA_EPS)
    dm = np.clip(amin - phi0, -np.pi + DELTA_EPS, -DELTA_EPS)
    v0f, v0t = base.vm[f], base.vm[t]
    return LineData(
        phi0=phi0,
        v0f=v0f,
        v0t=v0t,
        delta_plus=dp,
        delta_minus=dm,
        a_up=sin_curvature(dm),
        a_lo=sin_curvature(dp),
        alpha_f=np.where(f_pq < n_pq, v0t, 0.0),
        alpha_t=np.where(t_pq < n_pq, v0f, 0.0),
        f_pq=f_pq,
        t_pq=t_pq,
    )


def eval_g(state: PolarState, u: ControlVector, model: RestrictionModel) -> np.ndarray:
    """Residual ``psi - J_psi0 x``, evaluated in closed form."""
    idx, ln = model.idx, model.lines
    f, t = idx.lines[:, 0], idx.lines[:, 1]
    vm = state.vm
    phi = state.va[f] - state.va[t]
    dphi = phi - ln.phi0
    vv = vm[f] * vm[t]
    g_cos = vv * np.cos(dphi) - ln.alpha_f * vm[f] - ln.alpha_t * vm[t]
    g_sin = vv * np.sin(dphi) - ln.v0f * ln.v0t * phi
    g_sq = vm ** 2
    g_sq[idx.pq] -= 2.0 * model.v0_pq * vm[idx.pq]
    return np.concatenate([u.p_ns, u.q_pq, g_cos, g_sin, g_sq])


def build_model(
    case: NetworkCase,
    adm: Admittance,
    idx: IndexMaps,
    base_state: PolarState,
    base_u: ControlVector,
    options: ModelOptions | None = None,
) -> RestrictionModel:
    """Freeze everything the certificate needs at a solved, feasible base point.

    Raises:
        InfeasibleBase: the base does not solve the power flow or violates
            a certified limit.
        SingularJacobian: the power flow Jacobian at the base is singular.
    """
    opts = options or ModelOptions()
    lay = layout_of(idx)
    if opts.check_base:
        res = mismatch(base_state, adm, idx, base_u)
        if res.size and np.max(np.abs(res)) > opts.base_tol:
            raise InfeasibleBase(
                f"base point does not solve the power flow (mismatch {np.max(np.abs(res)):.3g})"
            )
        rep = check_operational(case, idx, base_state, adm)
        bad = []
        if rep.v_violation.size and rep.v_violation.max() > 0:
            bad.append("voltage")
        if rep.ang_violation.size and rep.ang_violation.max() > 0:
            bad.append("angle difference")
        if opts.reactive_limits:
            qv = rep.q_violation if opts.slack_q_limits else rep.q_violation[1:]
            if qv.size and qv.max() > 0:
                bad.append("reactive power")
        if bad:
            raise InfeasibleBase("base point violates " + ", ".join(bad) + " limits")

    pa = phase_adjust(case, adm, idx, base_state)
    m_mat = build_m(pa, idx)
    j_psi0 = basis_jacobian(base_state, pa, idx)
    j_f0 = m_mat @ j_psi0
    lu, piv = sla.lu_factor(j_f0, check_finite=True)
    anorm = np.linalg.norm(j_f0, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    log.debug("base Jacobian reciprocal condition %.3e", rcond)
    if info != 0 or not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise SingularJacobian(f"base Jacobian is singular (rcond={rcond:.3e})")

    a_mat = build_a(case, idx)
    k_mat = -a_mat @ sla.lu_solve((lu, piv), m_mat)
    k_plus = np.where(k_mat > 0, k_mat, 0.0)
    k_minus = np.where(k_mat < 0, k_mat, 0.0)

    gens = case.gen_at()
    if opts.reactive_limits:
        l_buses = idx.pv if not opts.slack_q_limits else np.concatenate([idx.pv, [idx.slack]])
    else:
        l_buses = np.zeros(0, dtype=np.int64)
    l_buses = l_buses.astype(np.int64)
    l_mat = build_l(pa, idx, l_buses)
    qmax = np.array([gens[case.buses[i].id].q_max - case.buses[i].q_demand for i in l_buses])
    qmin = np.array([gens[case.buses[i].id].q_min - case.buses[i].q_demand for i in l_buses])
    d = np.concatenate([qmax, -qmin])

    pq = idx.pq
    amax = np.array([br.ang_max for br in case.branches])
    amin = np.array([br.ang_min for br in case.branches])
    vmax = np.array([case.buses[i].v_max for i in pq])
    vmin = np.array([case.buses[i].v_min for i in pq])
    b_max = np.concatenate([amax, vmax, -amin, -vmin])

    x0 = state_to_x(base_state, idx)
    return RestrictionModel(
        layout=lay,
        idx=idx,
        pa=pa,
        m_mat=m_mat,
        l_mat=l_mat,
        a_mat=a_mat,
        b_max=b_max,
        d=d,
        j_psi0=j_psi0,
        j_f0=j_f0,
        k_mat=k_mat,
        k_plus=k_plus,
        k_minus=k_minus,
        l_plus=np.where(l_mat > 0, l_mat, 0.0),
        l_minus=np.where(l_mat < 0, l_mat, 0.0),
        base_state=base_state.copy(),
        base_u=base_u,
        x0=x0,
        b_hat=a_mat @ x0,
        lines=_line_data(case, idx, base_state, pa.phi0),
        pq=pq,
        v0_pq=base_state.vm[pq].copy(),
        v0_sq=base_state.vm ** 2,
        l_buses=l_buses,
        rcond=float(rcond),
    )
