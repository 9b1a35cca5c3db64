"""Per-line interval bounds of the residual and basis functions.

This is the inner loop of every self-map evaluation, so it exists twice:
``line_bounds_jit`` (numba, scalar loop) and ``line_bounds_numpy``
(vectorized). ``line_bounds`` points at the jitted one unless numba is
missing or disabled through ``CONVRES_DISABLE_NUMBA``. Both compute the same
formulas; ``tests/test_kernels.py`` holds them to 1e-13.

Inputs per line ``l`` (all 1-D float arrays of equal length):

    tlo, thi      angle-difference interval relative to the base, phi - phi0
    dflo, dfhi    from-bus magnitude interval relative to v0f (0, 0 if fixed)
    dtlo, dthi    to-bus magnitude interval relative to v0t
    phi0          base angle difference
    v0f, v0t      base magnitudes
    a_up, a_lo    sine-envelope curvatures (positive / negative)
    alpha_f       coefficient of vf in the linear part of the cosine residual
    alpha_t       coefficient of vt

Output rows: g_cos_up, g_cos_lo, g_sin_up, g_sin_lo,
psi_cos_up, psi_cos_lo, psi_sin_up, psi_sin_lo.
"""

from __future__ import annotations

import numpy as np

from convres._jit import HAVE_NUMBA, njit

N_OUT = 8


def _line_bounds_loop(tlo, thi, dflo, dfhi, dtlo, dthi, phi0, v0f, v0t, a_up, a_lo, alpha_f, alpha_t):
    m = tlo.shape[0]
    out = np.empty((8, m))
    for l in range(m):
        V0 = v0f[l] * v0t[l]
        t0 = tlo[l]
        t1 = thi[l]
        # cosine residual cos(t) - 1 lies in [gc_lo, 0]
        gc_lo = -0.5 * max(t0 * t0, t1 * t1)
        # sine envelopes evaluated at both angle vertices
        su0 = t0 + a_up[l] * t0 * t0
        su1 = t1 + a_up[l] * t1 * t1
        sl0 = t0 + a_lo[l] * t0 * t0
        sl1 = t1 + a_lo[l] * t1 * t1
        s_hi = max(su0, su1)
        s_lo = min(sl0, sl1)
        # V0 * (sin t - t) over the interval
        ds_hi = V0 * max(su0 - t0, su1 - t1)
        ds_lo = V0 * min(sl0 - t0, sl1 - t1)
        # bilinear vv - V0 at the four magnitude vertices, plus linear part
        gv_hi = -np.inf
        gv_lo = np.inf
        cu = -np.inf
        cl = np.inf
        for jf in range(2):
            df = dflo[l] if jf == 0 else dfhi[l]
            for jt in range(2):
                dt = dtlo[l] if jt == 0 else dthi[l]
                lin = v0f[l] * dt + df * v0t[l]
                up = 0.25 * (df + dt) ** 2 + lin
                lo = -0.25 * (df - dt) ** 2 + lin
                res = alpha_f[l] * (v0f[l] + df) + alpha_t[l] * (v0t[l] + dt)
                gv_hi = max(gv_hi, up)
                gv_lo = min(gv_lo, lo)
                cu = max(cu, up + V0 - res)
                cl = min(cl, lo + V0 - res)
        # couple the vv interval with the cos / sin intervals
        pc_lo = np.inf
        gcc_lo = np.inf
        ps_hi = -np.inf
        ps_lo = np.inf
        q_hi = -np.inf
        q_lo = np.inf
        for jv in range(2):
            gv = gv_lo if jv == 0 else gv_hi
            for jc in range(2):
                gc = gc_lo if jc == 0 else 0.0
                prod = -0.25 * (gv - gc) ** 2 + V0 * gc
                pc_lo = min(pc_lo, prod + gv)
                gcc_lo = min(gcc_lo, prod)
            for js in range(2):
                gs = s_lo if js == 0 else s_hi
                sq_p = 0.25 * (gv + gs) ** 2
                sq_m = -0.25 * (gv - gs) ** 2
                ps_hi = max(ps_hi, sq_p + V0 * gs)
                ps_lo = min(ps_lo, sq_m + V0 * gs)
                q_hi = max(q_hi, sq_p)
                q_lo = min(q_lo, sq_m)
        lin0 = V0 * phi0[l]
        out[0, l] = cu
        out[1, l] = gcc_lo + cl
        out[2, l] = q_hi + ds_hi - lin0
        out[3, l] = q_lo + ds_lo - lin0
        out[4, l] = gv_hi + V0
        out[5, l] = pc_lo + V0
        out[6, l] = ps_hi
        out[7, l] = ps_lo
    return out


line_bounds_jit = njit(_line_bounds_loop)


def line_bounds_numpy(tlo, thi, dflo, dfhi, dtlo, dthi, phi0, v0f, v0t, a_up, a_lo, alpha_f, alpha_t):
    V0 = v0f * v0t
    t = np.stack([tlo, thi])
    gc_lo = -0.5 * np.max(t * t, axis=0)
    su = t + a_up * t * t
    sl = t + a_lo * t * t
    s_hi = su.max(axis=0)
    s_lo = sl.min(axis=0)
    ds_hi = V0 * (su - t).max(axis=0)
    ds_lo = V0 * (sl - t).min(axis=0)

    df = np.stack([dflo, dflo, dfhi, dfhi])
    dt = np.stack([dtlo, dthi, dtlo, dthi])
    lin = v0f * dt + df * v0t
    up = 0.25 * (df + dt) ** 2 + lin
    lo = -0.25 * (df - dt) ** 2 + lin
    res = alpha_f * (v0f + df) + alpha_t * (v0t + dt)
    gv_hi = up.max(axis=0)
    gv_lo = lo.min(axis=0)
    cu = (up + V0 - res).max(axis=0)
    cl = (lo + V0 - res).min(axis=0)

    gv = np.stack([gv_lo, gv_lo, gv_hi, gv_hi])
    gc = np.stack([gc_lo, np.zeros_like(gc_lo), gc_lo, np.zeros_like(gc_lo)])
    gs = np.stack([s_lo, s_hi, s_lo, s_hi])
    prod = -0.25 * (gv - gc) ** 2 + V0 * gc
    pc_lo = (prod + gv).min(axis=0)
    gcc_lo = prod.min(axis=0)
    sq_p = 0.25 * (gv + gs) ** 2
    sq_m = -0.25 * (gv - gs) ** 2
    lin0 = V0 * phi0
    return np.stack(
        [
            cu,
            gcc_lo + cl,
            sq_p.max(axis=0) + ds_hi - lin0,
            sq_m.min(axis=0) + ds_lo - lin0,
            gv_hi + V0,
            pc_lo + V0,
            (sq_p + V0 * gs).max(axis=0),
            (sq_m + V0 * gs).min(axis=0),
        ]
    )


line_bounds = line_bounds_jit if HAVE_NUMBA else line_bounds_numpy
