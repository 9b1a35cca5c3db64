"""Newton-Raphson AC power flow in polar coordinates and limit checking.

This is the ground-truth oracle: certificates produced elsewhere are
validated against it, never derived from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from convres.matpower_io import NetworkCase
from convres.network import Admittance, IndexMaps

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class PolarState:
    va: np.ndarray
    vm: np.ndarray

    def copy(self) -> "PolarState":
        return PolarState(self.va.copy(), self.vm.copy())


@dataclass(frozen=True)
class ControlVector:
    """Active injections at non-slack buses plus the fixed context.

    ``p_ns`` follows ``idx.ns``, ``q_pq`` follows ``idx.pq`` and ``v_pv``
    follows ``idx.pv``.
    """

    p_ns: np.ndarray
    q_pq: np.ndarray
    v_pv: np.ndarray
    slack_va: float
    slack_vm: float

    def with_p(self, p_ns: np.ndarray) -> "ControlVector":
        p_ns = np.asarray(p_ns, dtype=float)
        if p_ns.shape != self.p_ns.shape:
            raise ValueError(f"p_ns has shape {p_ns.shape}, expected {self.p_ns.shape}")
        return replace(self, p_ns=p_ns)


@dataclass
class ConstraintReport:
    q_violation: np.ndarray
    v_violation: np.ndarray
    ang_violation: np.ndarray
    gen_buses: np.ndarray = field(repr=False)
    feasible: bool = False

    def worst(self) -> float:
        parts = [a for a in (self.q_violation, self.v_violation, self.ang_violation) if a.size]
        return max((float(a.max()) for a in parts), default=-np.inf)


class Diverged(Exception):
    """Newton-Raphson failed; carries the last iterate for diagnostics."""

    def __init__(self, message: str, state: PolarState, mismatch: float, iterations: int):
        super().__init__(message)
        self.state = state
        self.mismatch = mismatch
        self.iterations = iterations


def base_control(case: NetworkCase, idx: IndexMaps) -> ControlVector:
    """Injections and setpoints exactly as stored in the case."""
    n = idx.n_bus
    gens = case.gen_at()
    p = np.empty(n)
    q = np.empty(n)
    vset = np.array([b.vm_init for b in case.buses])
    for i, b in enumerate(case.buses):
        g = gens.get(b.id)
        p[i] = (g.p_gen if g else 0.0) - b.p_demand
        q[i] = (g.q_gen if g else 0.0) - b.q_demand
        if g is not None:
            vset[i] = g.v_set
    return ControlVector(
        p_ns=p[idx.ns],
        q_pq=q[idx.pq],
        v_pv=vset[idx.pv],
        slack_va=case.buses[idx.slack].va_init,
        slack_vm=float(vset[idx.slack]),
    )


def flat_start(case: NetworkCase, idx: IndexMaps, u: ControlVector) -> PolarState:
    n = idx.n_bus
    va = np.full(n, u.slack_va)
    vm = np.ones(n)
    vm[idx.pv] = u.v_pv
    vm[idx.slack] = u.slack_vm
    return PolarState(va, vm)


def _enforce_fixed(state: PolarState, idx: IndexMaps, u: ControlVector) -> PolarState:
    va, vm = state.va.astype(float).copy(), state.vm.astype(float).copy()
    va[idx.slack] = u.slack_va
    vm[idx.slack] = u.slack_vm
    vm[idx.pv] = u.v_pv
    return PolarState(va, vm)


def injections(state: PolarState, adm: Admittance) -> tuple[np.ndarray, np.ndarray]:
    """Net complex power injections ``V * conj(Y V)`` split into (p, q)."""
    v = state.vm * np.exp(1j * state.va)
    s = v * np.conj(adm.y @ v)
    return s.real, s.imag


def _ds_dv(v: np.ndarray, y):
    """Partials of complex injections w.r.t. angle and magnitude."""
    ibus = y @ v
    vn = v / np.abs(v)
    if sp.issparse(y):
        dv, dvn, di = sp.diags(v), sp.diags(vn), sp.diags(ibus)
        ds_dvm = dv @ (y @ dvn).conj() + di.conj() @ dvn
        ds_dva = 1j * dv @ (di - y @ dv).conj()
        return ds_dva.tocsr(), ds_dvm.tocsr()
    ds_dvm = v[:, None] * np.conj(y * vn[None, :]) + np.diag(np.conj(ibus) * vn)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(ibus) - y * v[None, :])
    return ds_dva, ds_dvm


def pf_jacobian(state: PolarState, adm: Admittance, idx: IndexMaps):
    """d[p_ns; q_pq] / d[va_ns; vm_pq] of the computed injections.

    Dense ndarray for dense admittances, CSR otherwise.
    """
    v = state.vm * np.exp(1j * state.va)
    ds_dva, ds_dvm = _ds_dv(v, adm.y)
    ns, pq = idx.ns, idx.pq
    if sp.issparse(ds_dva):
        j11 = ds_dva[ns][:, ns].real
        j12 = ds_dvm[ns][:, pq].real
        j21 = ds_dva[pq][:, ns].imag
        j22 = ds_dvm[pq][:, pq].imag
        return sp.bmat([[j11, j12], [j21, j22]], format="csr")
    j11 = ds_dva[np.ix_(ns, ns)].real
    j12 = ds_dvm[np.ix_(ns, pq)].real
    j21 = ds_dva[np.ix_(pq, ns)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def mismatch(state: PolarState, adm: Admittance, idx: IndexMaps, u: ControlVector) -> np.ndarray:
    """Specified minus computed injections, stacked [p_ns; q_pq]."""
    p, q = injections(state, adm)
    return np.concatenate([u.p_ns - p[idx.ns], u.q_pq - q[idx.pq]])


def nr_solve(
    case: NetworkCase,
    adm: Admittance,
    idx: IndexMaps,
    u: ControlVector,
    x0: PolarState | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
    blowup: float = 1e6,
) -> PolarState:
    """Full Newton-Raphson with a fresh Jacobian every iteration.

    PV magnitudes and the slack bus are pinned to ``u`` regardless of ``x0``.
    No PV/PQ switching is done; reactive limits are checked separately.

    Raises:
        Diverged: ``max_iter`` reached, mismatch above ``blowup``, or a
            singular / non-finite Newton step.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = _enforce_fixed(x0 if x0 is not None else flat_start(case, idx, u), idx, u)
    va, vm = state.va, state.vm
    ns, pq = idx.ns, idx.pq
    n_ns = len(ns)
    err = np.inf
    for it in range(max_iter + 1):
        f = mismatch(PolarState(va, vm), adm, idx, u)
        err = float(np.max(np.abs(f))) if f.size else 0.0
        if not np.isfinite(err) or err > blowup:
            raise Diverged(f"mismatch blew up to {err:.3g}", PolarState(va, vm), err, it)
        if err <= tol:
            return PolarState(va, vm)
        if it == max_iter:
            break
        jac = pf_jacobian(PolarState(va, vm), adm, idx)
        try:
            if sp.issparse(jac):
                dx = spla.spsolve(jac.tocsc(), f)
            else:
                dx = np.linalg.solve(jac, f)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise Diverged(f"singular Jacobian: {exc}", PolarState(va, vm), err, it) from exc
        if not np.all(np.isfinite(dx)):
            raise Diverged("non-finite Newton step", PolarState(va, vm), err, it)
        va = va.copy()
        vm = vm.copy()
        va[ns] += dx[:n_ns]
        vm[pq] += dx[n_ns:]
    raise Diverged(
        f"no convergence in {max_iter} iterations (mismatch {err:.3g})",
        PolarState(va, vm),
        err,
        max_iter,
    )


def check_operational(
    case: NetworkCase, idx: IndexMaps, state: PolarState, adm: Admittance
) -> ConstraintReport:
    """Signed margins of every operational limit; positive means violated.

    Reactive limits cover all generator buses (PV and slack) on generator
    output, i.e. net injection plus local demand.
    """
    _, q = injections(state, adm)
    gens = case.gen_at()
    gen_buses = np.concatenate([[idx.slack], idx.pv]).astype(np.int64)
    qv = np.empty(len(gen_buses))
    for k, i in enumerate(gen_buses):
        bus = case.buses[i]
        g = gens.get(bus.id)
        qg = q[i] + bus.q_demand
        if g is None:
            qv[k] = -np.inf
        else:
            qv[k] = max(qg - g.q_max, g.q_min - qg)
    vmin = np.array([case.buses[i].v_min for i in idx.pq])
    vmax = np.array([case.buses[i].v_max for i in idx.pq])
    vpq = state.vm[idx.pq]
    vv = np.maximum(vpq - vmax, vmin - vpq)
    phi = state.va[idx.lines[:, 0]] - state.va[idx.lines[:, 1]]
    amin = np.array([br.ang_min for br in case.branches])
    amax = np.array([br.ang_max for br in case.branches])
    av = np.maximum(phi - amax, amin - phi)
    feasible = all(
        (a.size == 0 or float(a.max()) <= FEAS_TOL) for a in (qv, vv, av)
    )
    return ConstraintReport(qv, vv, av, gen_buses=gen_buses, feasible=feasible)


def admit_base_point(
    case: NetworkCase,
    idx: IndexMaps,
    state: PolarState,
    adm: Admittance,
    margin: float = 1e-3,
) -> tuple[NetworkCase, list[str]]:
    """Widen just the limits that ``state`` violates or sits within ``margin`` of.

    Shipped case data is not always feasible at its own power flow solution,
    while a restriction needs a feasible base point. Every widened limit ends
    ``margin`` beyond the base value; the returned notes list each change.
    """
    _, q = injections(state, adm)
    notes: list[str] = []
    gens = dict(case.gen_at())
    for i in np.concatenate([[idx.slack], idx.pv]).astype(int):
        bus = case.buses[i]
        g = gens.get(bus.id)
        if g is None:
            continue
        qg = float(q[i] + bus.q_demand)
        qmax, qmin = g.q_max, g.q_min
        if qg > qmax - margin:
            qmax = qg + margin
        if qg < qmin + margin:
            qmin = qg - margin
        if (qmax, qmin) != (g.q_max, g.q_min):
            notes.append(
                f"bus {bus.id}: q limits [{g.q_min:.6g}, {g.q_max:.6g}] -> [{qmin:.6g}, {qmax:.6g}] pu"
            )
            gens[bus.id] = replace(g, q_max=qmax, q_min=qmin)
    buses = list(case.buses)
    for i in idx.pq:
        bus = buses[i]
        v = float(state.vm[i])
        vmax, vmin = bus.v_max, bus.v_min
        if v > vmax - margin:
            vmax = v + margin
        if v < vmin + margin:
            vmin = v - margin
        if (vmax, vmin) != (bus.v_max, bus.v_min):
            notes.append(f"bus {bus.id}: v limits [{bus.v_min:.6g}, {bus.v_max:.6g}] -> [{vmin:.6g}, {vmax:.6g}] pu")
            buses[i] = replace(bus, v_max=vmax, v_min=vmin)
    branches = list(case.branches)
    phi = state.va[idx.lines[:, 0]] - state.va[idx.lines[:, 1]]
    for k, br in enumerate(branches):
        amax, amin = br.ang_max, br.ang_min
        if phi[k] > amax - margin:
            amax = float(phi[k]) + margin
        if phi[k] < amin + margin:
            amin = float(phi[k]) - margin
        if (amax, amin) != (br.ang_max, br.ang_min):
            notes.append(f"branch {br.from_bus}-{br.to_bus}: angle limits widened")
            branches[k] = replace(br, ang_max=amax, ang_min=amin)
    new = replace(
        case,
        buses=tuple(buses),
        gens=tuple(gens[g.bus_id] for g in case.gens),
        branches=tuple(branches),
    )
    return new, notes
