"""Quadratic envelopes and their interval bounds over a box of states.

Every envelope here encloses its nonlinearity from outside: the
over-estimator is convex and the under-estimator concave, so the extreme
value over a box is attained at a vertex. That is what lets the bounds be
computed by enumerating a handful of vertices per line or bus.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from convres import kernels
from convres.errors import DomainError

if TYPE_CHECKING:
    from convres.basis import RestrictionModel
    from convres.powerflow import ControlVector

# slack allowed when checking an interval against the sine validity window
WINDOW_TOL = 1e-12


def env_quadratic(x, x0):
    """(upper, lower) of ``x**2``: the function itself and its tangent at ``x0``."""
    x = np.asarray(x, dtype=float)
    return x * x, 2.0 * x0 * x - x0 * x0


def env_bilinear(x, y, x0, y0, rho1: float = 1.0, rho2: float = 1.0):
    """(upper, lower) of ``x*y`` around ``(x0, y0)``.

    The upper bound is tight along ``rho2*dx == dy/rho2`` and the lower one
    along ``rho1*dx == -dy/rho1``.
    """
    dx = np.asarray(x, dtype=float) - x0
    dy = np.asarray(y, dtype=float) - y0
    lin = x0 * np.asarray(y) + np.asarray(x) * y0 - x0 * y0
    upper = 0.25 * (rho2 * dx + dy / rho2) ** 2 + lin
    lower = -0.25 * (rho1 * dx - dy / rho1) ** 2 + lin
    return upper, lower


def sin_curvature(delta):
    """Quadratic coefficient that makes ``t + c t**2`` touch ``sin`` at ``delta``."""
    delta = np.asarray(delta, dtype=float)
    return (np.sin(delta) - delta) / (delta * delta)


def env_trig(theta, delta_plus, delta_minus):
    """Envelopes of sin and cos around zero.

    Returns ``(sin_upper, sin_lower, cos_upper, cos_lower)``. The sine lower
    bound holds for ``theta <= delta_plus`` and the upper for
    ``theta >= delta_minus``; outside that window :class:`DomainError` is
    raised.
    """
    theta = np.asarray(theta, dtype=float)
    dp = np.asarray(delta_plus, dtype=float)
    dm = np.asarray(delta_minus, dtype=float)
    if np.any(dp <= 0) or np.any(dp > np.pi) or np.any(dm >= 0) or np.any(dm < -np.pi):
        raise DomainError("curvature parameters must satisfy 0 < d+ <= pi, -pi <= d- < 0")
    if np.any(theta > dp + WINDOW_TOL) or np.any(theta < dm - WINDOW_TOL):
        raise DomainError("angle outside the sine envelope validity window")
    sq = theta * theta
    sin_lower = theta + sin_curvature(dp) * sq
    sin_upper = theta + sin_curvature(dm) * sq
    return sin_upper, sin_lower, np.ones_like(theta), 1.0 - 0.5 * sq


@dataclass(frozen=True)
class LineIntervals:
    phi_lb: float
    phi_ub: float
    vf_lb: float
    vf_ub: float
    vt_lb: float
    vt_ub: float


@dataclass(frozen=True)
class LineBase:
    """Base-point data of one line needed to bound its residuals."""

    phi0: float
    v0f: float
    v0t: float
    delta_plus: float
    delta_minus: float
    alpha_f: float = 0.0
    alpha_t: float = 0.0


LINE_KEYS = ("g_cos_up", "g_cos_lo", "g_sin_up", "g_sin_lo",
             "psi_cos_up", "psi_cos_lo", "psi_sin_up", "psi_sin_lo")


def check_window(tlo, thi, delta_plus, delta_minus) -> None:
    if np.any(thi > delta_plus + WINDOW_TOL) or np.any(tlo < delta_minus - WINDOW_TOL):
        raise DomainError("angle interval leaves the sine envelope validity window")


def interval_bounds_line(li: LineIntervals, base: LineBase) -> dict[str, float]:
    """Bounds of the residuals and basis terms of one line.

    Keys ``cos_*``, ``sin_*`` and ``vv_*`` bound the scalar residuals
    ``cos(t) - 1``, ``sin(t) - t`` and ``(vf - v0f) * (vt - v0t)``; the
    ``g_*`` and ``psi_*`` keys are the coupled bounds used by the restriction
    (see :data:`LINE_KEYS`). ``alpha_f``/``alpha_t`` are the coefficients of
    the from/to magnitudes in the linear part subtracted from ``vf*vt*cos``;
    for a line whose two ends are both free they are ``v0t`` and ``v0f``.
    """
    if li.phi_lb > li.phi_ub or li.vf_lb > li.vf_ub or li.vt_lb > li.vt_ub:
        raise ValueError("empty interval")
    tlo, thi = li.phi_lb - base.phi0, li.phi_ub - base.phi0
    check_window(tlo, thi, base.delta_plus, base.delta_minus)

    def a(x):
        return np.array([x], dtype=float)

    out = kernels.line_bounds_numpy(
        a(tlo), a(thi),
        a(li.vf_lb - base.v0f), a(li.vf_ub - base.v0f),
        a(li.vt_lb - base.v0t), a(li.vt_ub - base.v0t),
        a(base.phi0), a(base.v0f), a(base.v0t),
        sin_curvature(a(base.delta_minus)), sin_curvature(a(base.delta_plus)),
        a(base.alpha_f), a(base.alpha_t),
    )
    res = {k: float(out[i, 0]) for i, k in enumerate(LINE_KEYS)}
    t = np.array([tlo, thi])
    su = t + sin_curvature(base.delta_minus) * t * t
    sl = t + sin_curvature(base.delta_plus) * t * t
    df = np.array([li.vf_lb, li.vf_lb, li.vf_ub, li.vf_ub]) - base.v0f
    dt = np.array([li.vt_lb, li.vt_ub, li.vt_lb, li.vt_ub]) - base.v0t
    res.update(
        cos_up=0.0,
        cos_lo=float(-0.5 * np.max(t * t)),
        sin_up=float(np.max(su - t)),
        sin_lo=float(np.min(sl - t)),
        vv_up=float(np.max(0.25 * (df + dt) ** 2)),
        vv_lo=float(np.min(-0.25 * (df - dt) ** 2)),
    )
    return res


def interval_bounds_bus(v_lb, v_ub, v0):
    """Bounds of ``v**2`` and of its residual ``v**2 - 2 v0 v`` on ``[v_lb, v_ub]``.

    Returns ``(g_up, g_lo, psi_up, psi_lo)``; works elementwise on arrays.
    """
    v_lb = np.asarray(v_lb, dtype=float)
    v_ub = np.asarray(v_ub, dtype=float)
    if np.any(v_lb > v_ub):
        raise ValueError("empty voltage interval")
    psi_up = np.maximum(v_lb * v_lb, v_ub * v_ub)
    psi_lo = 2.0 * v0 * v_lb - v0 * v0
    g_up = np.maximum(v_lb * v_lb - 2.0 * v0 * v_lb, v_ub * v_ub - 2.0 * v0 * v_ub)
    g_lo = -np.asarray(v0, dtype=float) ** 2 + np.zeros_like(v_lb)
    return g_up, g_lo, psi_up, psi_lo


@dataclass(frozen=True)
class BoundVectors:
    g_up: np.ndarray
    g_lo: np.ndarray
    psi_up: np.ndarray
    psi_lo: np.ndarray


def nonlinear_bounds(b: np.ndarray, model: "RestrictionModel", kernel=None):
    """Bounds of the line and bus blocks of g and psi over the box ``b``.

    Returns ``(g_up, g_lo, psi_up, psi_lo)`` each of length ``2|E| + |N|``.
    """
    kernel = kernel or kernels.line_bounds
    lay = model.layout
    m, npq = lay.n_line, lay.n_pq
    phi_hi = b[:m]
    v_hi = b[m:m + npq]
    phi_lo = -b[m + npq:2 * m + npq]
    v_lo = -b[2 * m + npq:]
    if np.any(phi_lo > phi_hi + WINDOW_TOL) or np.any(v_lo > v_hi + WINDOW_TOL):
        raise DomainError("box bounds describe an empty interval")
    ln = model.lines
    tlo = phi_lo - ln.phi0
    thi = phi_hi - ln.phi0
    check_window(tlo, thi, ln.delta_plus, ln.delta_minus)

    # magnitude offsets; fixed ends get the padded zero slot at index npq
    dlo = np.append(v_lo - model.v0_pq, 0.0)
    dhi = np.append(v_hi - model.v0_pq, 0.0)
    out = kernel(
        tlo, thi,
        dlo[ln.f_pq], dhi[ln.f_pq], dlo[ln.t_pq], dhi[ln.t_pq],
        ln.phi0, ln.v0f, ln.v0t, ln.a_up, ln.a_lo, ln.alpha_f, ln.alpha_t,
    )
    qg_up, qg_lo, qp_up, qp_lo = interval_bounds_bus(v_lo, v_hi, model.v0_pq)

    def stack(cos_row, sin_row, bus_pq):
        bus = model.v0_sq.copy()
        bus[model.pq] = bus_pq
        return np.concatenate([out[cos_row], out[sin_row], bus])

    return (
        stack(0, 2, qg_up),
        stack(1, 3, qg_lo),
        stack(4, 6, qp_up),
        stack(5, 7, qp_lo),
    )


def assemble_bounds(u: "ControlVector", b: np.ndarray, model: "RestrictionModel") -> BoundVectors:
    """Stack injection entries and the line/bus bounds in basis order.

    Injection entries are the same in all four vectors: they are the
    controls themselves and the fixed PQ reactive injections.
    """
    g_up, g_lo, p_up, p_lo = nonlinear_bounds(np.asarray(b, dtype=float), model)
    inj = np.concatenate([u.p_ns, u.q_pq])
    return BoundVectors(
        g_up=np.concatenate([inj, g_up]),
        g_lo=np.concatenate([inj, g_lo]),
        psi_up=np.concatenate([inj, p_up]),
        psi_lo=np.concatenate([inj, p_lo]),
    )
