"""Shared setup: load a case, solve its base point and build the model."""

from __future__ import annotations

from dataclasses import dataclass, field

from convres.basis import ModelOptions, RestrictionModel, build_model
from convres.matpower_io import NetworkCase, scale_voltage_limits
from convres.network import Admittance, IndexMaps, build_admittance, build_index_maps
from convres.powerflow import (
    ControlVector,
    Diverged,
    PolarState,
    admit_base_point,
    base_control,
    nr_solve,
)
from convres.errors import InfeasibleBase


@dataclass(frozen=True)
class Study:
    """A case together with its solved base point and restriction model."""

    case: NetworkCase
    idx: IndexMaps
    adm: Admittance
    u0: ControlVector
    base: PolarState
    model: RestrictionModel
    notes: list[str] = field(default_factory=list)


def prepare(
    case: NetworkCase,
    vlimit: float | None = None,
    admit_base: bool = False,
    margin: float = 1e-3,
    options: ModelOptions | None = None,
) -> Study:
    """Solve ``case`` at its stored injections and build the restriction there.

    Args:
        case: A validated network.
        vlimit: If given, PQ voltage limits become ``v0 * (1 -/+ vlimit)``
            around the solved base magnitudes.
        admit_base: Widen any limit the base violates so it becomes feasible.
        margin: Distance kept between the base and a widened limit.
        options: Forwarded to :func:`build_model`.

    Raises:
        InfeasibleBase: the stored injections have no power flow solution, or
            the solution violates limits and ``admit_base`` is off.
    """
    idx = build_index_maps(case)
    adm = build_admittance(case)
    u0 = base_control(case, idx)
    try:
        base = nr_solve(case, adm, idx, u0)
    except Diverged as exc:
        raise InfeasibleBase(f"power flow at the stored injections did not converge: {exc}") from exc
    if vlimit is not None:
        case = scale_voltage_limits(case, vlimit, base.vm)
    notes: list[str] = []
    if admit_base:
        case, notes = admit_base_point(case, idx, base, adm, margin)
    model = build_model(case, adm, idx, base, u0, options)
    return Study(case, idx, adm, u0, base, model, notes)
