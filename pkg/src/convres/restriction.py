"""Certification of injection vectors through a self-mapping box.

A control ``u`` is certified when a box ``b`` is found with

    K+ g_up(u, b) + K- g_lo(u, b) <= b          (the box maps into itself)
    L+ psi_up(u, b) + L- psi_lo(u, b) <= d      (reactive limits hold on it)
    b <= b_max                                   (voltage / angle limits)

Brouwer's theorem then gives a power flow solution inside the box. The box
is searched by the monotone iteration ``b <- max(b, w(b))`` started at the
base point; the map is monotone in ``b``, so if any witness containing the
base exists the iteration stays below it and converges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from convres.basis import Layout, RestrictionModel
from convres.envelopes import WINDOW_TOL, nonlinear_bounds
from convres.errors import DomainError
from convres.powerflow import ControlVector

CERTIFIED = "Certified"
NOT_CERTIFIED = "NotCertified"

DIVERGED = "Diverged"
BOX_EXCEEDED = "BoxExceeded"
VALIDITY_EXCEEDED = "ValidityExceeded"
ITERATION_CAP = "IterationCap"
INEQUALITY_VIOLATED = "InequalityViolated"
SELF_MAP_VIOLATED = "SelfMapViolated"

WitnessProvider = Callable[[ControlVector, RestrictionModel], Iterable[np.ndarray]]


@dataclass(frozen=True)
class BoxBounds:
    phi_ub: np.ndarray
    phi_lb: np.ndarray
    v_ub: np.ndarray
    v_lb: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.phi_ub, self.v_ub, -self.phi_lb, -self.v_lb])

    @classmethod
    def unpack(cls, b: np.ndarray, layout: Layout) -> "BoxBounds":
        m, npq = layout.n_line, layout.n_pq
        b = np.asarray(b, dtype=float)
        if b.shape != (layout.p,):
            raise ValueError(f"b has shape {b.shape}, expected ({layout.p},)")
        return cls(
            phi_ub=b[:m].copy(),
            phi_lb=-b[m + npq:2 * m + npq],
            v_ub=b[m:m + npq].copy(),
            v_lb=-b[2 * m + npq:],
        )

    def is_nonempty(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.phi_lb <= self.phi_ub + tol) and np.all(self.v_lb <= self.v_ub + tol))


@dataclass(frozen=True)
class CertifyOptions:
    eps0: float = 1e-6
    tol_conv: float = 1e-9
    tol_cert: float = 1e-9
    max_iter: int = 500


@dataclass
class Certificate:
    """Outcome of a certification attempt.

    ``status == "Certified"`` means every margin is at least ``-tol_cert``;
    margins are reported so a caller can insist on more slack.
    """

    status: str
    reason: str | None
    b_star: BoxBounds
    self_map_margin: np.ndarray
    ineq_margin: np.ndarray
    box_margin: np.ndarray
    iterations: int
    tol_cert: float
    enclosure: dict[str, np.ndarray] | None = field(default=None)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def b_vector(self) -> np.ndarray:
        return self.b_star.pack()

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            if not math.isfinite(x):
                return None
            return float(f"{x:.9g}")

        def family(arr):
            if arr.size == 0:
                return {"min": None, "argmin": None}
            k = int(np.argmin(arr))
            return {"min": num(arr[k]), "argmin": k}

        def vec(arr):
            return [num(v) for v in arr]

        out = {
            "status": self.status,
            "reason": self.reason,
            "iterations": self.iterations,
            "tol_cert": num(self.tol_cert),
            "margins": {
                "self_map": family(self.self_map_margin),
                "inequality": family(self.ineq_margin),
                "box": family(self.box_margin),
            },
            "b_star": {
                "phi_ub": vec(self.b_star.phi_ub),
                "phi_lb": vec(self.b_star.phi_lb),
                "v_ub": vec(self.b_star.v_ub),
                "v_lb": vec(self.b_star.v_lb),
            },
            "enclosure": None,
        }
        if self.enclosure is not None:
            out["enclosure"] = {k: vec(v) for k, v in self.enclosure.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def degenerate_box(model: RestrictionModel) -> np.ndarray:
    """``b`` whose box is the single base state."""
    return model.b_hat.copy()


def self_map(u: ControlVector, b: np.ndarray, model: RestrictionModel, kernel=None) -> np.ndarray:
    """Upper bound ``w(u, b)`` of ``K g(x, u)`` over all ``x`` in the box.

    Raises:
        DomainError: the box leaves the sine envelope validity window.
    """
    n_inj = model.layout.n_inj
    g_up, g_lo, _, _ = nonlinear_bounds(b, model, kernel)
    inj = np.concatenate([u.p_ns, u.q_pq])
    return (
        model.k_inj @ inj
        + model.k_plus[:, n_inj:] @ g_up
        + model.k_minus[:, n_inj:] @ g_lo
    )


def _ineq_from_bounds(model: RestrictionModel, psi_up: np.ndarray, psi_lo: np.ndarray) -> np.ndarray:
    n_inj = model.layout.n_inj
    if model.l_mat.shape[0] == 0:
        return np.zeros(0)
    return model.d - (model.l_plus[:, n_inj:] @ psi_up + model.l_minus[:, n_inj:] @ psi_lo)


def ineq_check(u: ControlVector, b: np.ndarray, model: RestrictionModel) -> np.ndarray:
    """``d - (L+ psi_up + L- psi_lo)``; nonnegative entries hold on the whole box.

    ``u`` does not enter: the limited rows carry no injection columns.
    """
    _, _, psi_up, psi_lo = nonlinear_bounds(b, model)
    return _ineq_from_bounds(model, psi_up, psi_lo)


def _in_window(b: np.ndarray, model: RestrictionModel) -> bool:
    m, npq = model.layout.n_line, model.layout.n_pq
    ln = model.lines
    thi = b[:m] - ln.phi0
    tlo = -b[m + npq:2 * m + npq] - ln.phi0
    return bool(np.all(thi <= ln.delta_plus + WINDOW_TOL) and np.all(tlo >= ln.delta_minus - WINDOW_TOL))


def _enclosure(box: BoxBounds) -> dict[str, np.ndarray]:
    return {"phi_lb": box.phi_lb, "phi_ub": box.phi_ub, "v_lb": box.v_lb, "v_ub": box.v_ub}


def check_at(
    u: ControlVector,
    b: np.ndarray,
    model: RestrictionModel,
    options: CertifyOptions | None = None,
    iterations: int = 0,
) -> Certificate:
    """Verify a candidate box in one shot, without iterating."""
    opts = options or CertifyOptions()
    b = np.asarray(b, dtype=float)
    box = BoxBounds.unpack(b, model.layout)
    box_margin = model.b_max - b
    nan_p = np.full(model.layout.p, -np.inf)
    nan_r = np.full(model.l_mat.shape[0], -np.inf)

    def refuse(reason, smm=nan_p, im=nan_r):
        return Certificate(NOT_CERTIFIED, reason, box, smm, im, box_margin, iterations, opts.tol_cert)

    if not np.all(np.isfinite(b)):
        return refuse(DIVERGED)
    if not box.is_nonempty(WINDOW_TOL) or not _in_window(b, model):
        return refuse(VALIDITY_EXCEEDED)
    try:
        g_up, g_lo, psi_up, psi_lo = nonlinear_bounds(b, model)
    except DomainError:
        return refuse(VALIDITY_EXCEEDED)
    n_inj = model.layout.n_inj
    inj = np.concatenate([u.p_ns, u.q_pq])
    w = model.k_inj @ inj + model.k_plus[:, n_inj:] @ g_up + model.k_minus[:, n_inj:] @ g_lo
    smm = b - w
    im = _ineq_from_bounds(model, psi_up, psi_lo)
    tol = opts.tol_cert
    if np.any(box_margin < -tol):
        return refuse(BOX_EXCEEDED, smm, im)
    if not np.all(np.isfinite(smm)):
        return refuse(DIVERGED, smm, im)
    if np.any(smm < -tol):
        return refuse(SELF_MAP_VIOLATED, smm, im)
    if im.size and np.any(im < -tol):
        return refuse(INEQUALITY_VIOLATED, smm, im)
    return Certificate(CERTIFIED, None, box, smm, im, box_margin, iterations, tol, _enclosure(box))


def certify(
    u: ControlVector,
    model: RestrictionModel,
    options: CertifyOptions | None = None,
    witness_provider: WitnessProvider | None = None,
    trace: list | None = None,
) -> Certificate:
    """Search for a self-mapping box around the base point and certify ``u``.

    Candidates from ``witness_provider`` (if any) are tried first through
    :func:`check_at`. ``trace``, when given, receives every iterate of ``b``.
    """
    opts = options or CertifyOptions()
    if witness_provider is not None:
        for cand in witness_provider(u, model):
            cert = check_at(u, cand, model, opts)
            if cert.certified:
                return cert

    n_inj = model.layout.n_inj
    inj = np.concatenate([u.p_ns, u.q_pq])
    w_inj = model.k_inj @ inj
    kp = model.k_plus[:, n_inj:]
    km = model.k_minus[:, n_inj:]
    has_l = model.l_mat.shape[0] > 0
    lp = model.l_plus[:, n_inj:]
    lm = model.l_minus[:, n_inj:]
    tol = opts.tol_cert

    b = model.b_hat + opts.eps0

    def stop(reason, k):
        return check_at(u, b, model, opts, iterations=k) if reason is None else _refusal(
            u, b, model, opts, reason, k
        )

    for k in range(opts.max_iter):
        if trace is not None:
            trace.append(b.copy())
        if not np.all(np.isfinite(b)):
            return stop(DIVERGED, k)
        if np.any(b > model.b_max + tol):
            return stop(BOX_EXCEEDED, k)
        if not _in_window(b, model):
            return stop(VALIDITY_EXCEEDED, k)
        g_up, g_lo, psi_up, psi_lo = nonlinear_bounds(b, model)
        if has_l and np.any(model.d - (lp @ psi_up + lm @ psi_lo) < -tol):
            # bounds only widen as b grows, so this cannot recover
            return stop(INEQUALITY_VIOLATED, k)
        w = w_inj + kp @ g_up + km @ g_lo
        b_new = np.maximum(b, w)
        step = float(np.max(b_new - b))
        b = b_new
        if not math.isfinite(step):
            return stop(DIVERGED, k + 1)
        if step < opts.tol_conv:
            if trace is not None:
                trace.append(b.copy())
            return stop(None, k + 1)
    return stop(ITERATION_CAP, opts.max_iter)


def _refusal(u, b, model, opts, reason, k) -> Certificate:
    cert = check_at(u, b, model, opts, iterations=k)
    if cert.certified:
        # the current iterate already works even though the search stopped
        return cert
    cert.reason = reason
    cert.status = NOT_CERTIFIED
    cert.enclosure = None
    return cert
