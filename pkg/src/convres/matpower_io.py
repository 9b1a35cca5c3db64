"""MATPOWER case-file reader.

Only the ``baseMVA``, ``bus``, ``gen`` and ``branch`` blocks are read; every
other assignment in the file (``gencost``, ``bus_name``, extensions) is
skipped. All quantities are stored per-unit on ``base_mva`` and angles in
radians, so nothing downstream ever re-applies the MVA conversion.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from convres.errors import CaseSyntaxError, ValidationError

SLACK, PV, PQ = "slack", "pv", "pq"
_KIND_BY_CODE = {1: PQ, 2: PV, 3: SLACK}

DEFAULT_ANGLE_LIMIT = math.radians(60.0)

# minimum column counts in MATPOWER format version 2
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_demand: float
    q_demand: float
    shunt_g: float
    shunt_b: float
    vm_init: float
    va_init: float
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Gen:
    """Aggregated in-service generation at one bus."""

    bus_id: int
    p_gen: float
    q_gen: float
    q_min: float
    q_max: float
    v_set: float
    in_service: bool = True


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float
    tap: float
    shift: float
    ang_min: float
    ang_max: float
    in_service: bool = True


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    gens: tuple[Gen, ...]
    branches: tuple[Branch, ...]
    name: str = field(default="", compare=False)

    def bus_index(self) -> dict[int, int]:
        """Map bus id to its row position in ``buses``."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def gen_at(self) -> dict[int, Gen]:
        return {g.bus_id: g for g in self.gens}


# ---------------------------------------------------------------------------
# tokenizing


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        # MATPOWER strings use single quotes; a % inside one is not a comment
        in_str = False
        cut = len(line)
        for i, ch in enumerate(line):
            if ch == "'":
                in_str = not in_str
            elif ch == "%" and not in_str:
                cut = i
                break
        out.append(line[:cut])
    return "\n".join(out)


_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n]+)")
_NAME_RE = re.compile(r"function\s+\w+\s*=\s*(\w+)")


def _parse_matrix(name: str, body: str) -> np.ndarray:
    rows = []
    for raw in re.split(r"[;\n]", body):
        raw = raw.strip().strip(",")
        if not raw:
            continue
        toks = [t for t in re.split(r"[\s,]+", raw) if t]
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise CaseSyntaxError(f"mpc.{name}: non-numeric entry in row {raw!r}") from exc
    if not rows:
        return np.zeros((0, _MIN_COLS.get(name, 0)))
    width = len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != width:
            raise CaseSyntaxError(
                f"mpc.{name}: row {k + 1} has {len(r)} columns, expected {width}"
            )
    need = _MIN_COLS.get(name, 0)
    if width < need:
        raise CaseSyntaxError(f"mpc.{name}: {width} columns, need at least {need}")
    return np.array(rows, dtype=float)


def _blocks(text: str) -> tuple[float, dict[str, np.ndarray]]:
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise CaseSyntaxError("missing mpc.baseMVA")
    try:
        base = float(m.group(1).strip())
    except ValueError as exc:
        raise CaseSyntaxError(f"mpc.baseMVA is not numeric: {m.group(1)!r}") from exc
    found = {}
    for bm in _BLOCK_RE.finditer(clean):
        key = bm.group(1)
        if key in _MIN_COLS:
            found[key] = _parse_matrix(key, bm.group(2))
    for key in _MIN_COLS:
        if key not in found:
            raise CaseSyntaxError(f"missing matrix block mpc.{key}")
    return base, found


# ---------------------------------------------------------------------------
# conversion


def parse_case(text: str, name: str = "") -> NetworkCase:
    """Parse MATPOWER m-file text into a validated :class:`NetworkCase`.

    Out-of-service generators and branches are dropped, isolated (type 4)
    buses are dropped together with their branches, and generators sharing a
    bus are merged. A PV bus left without generation is demoted to PQ, as
    MATPOWER does.

    Raises:
        CaseSyntaxError: malformed block or inconsistent row width.
        ValidationError: a structural invariant does not hold.
    """
    base, blk = _blocks(text)
    if not name:
        m = _NAME_RE.search(text)
        name = m.group(1) if m else ""
    if base <= 0:
        raise ValidationError("base_mva", f"baseMVA must be positive, got {base}")

    bus_m, gen_m, br_m = blk["bus"], blk["gen"], blk["branch"]

    live_bus = {int(r[0]) for r in bus_m if int(r[1]) != 4}
    isolated = {int(r[0]) for r in bus_m} - live_bus

    gens: dict[int, Gen] = {}
    for r in gen_m:
        if r[7] <= 0:
            continue
        bid = int(r[0])
        g = Gen(
            bus_id=bid,
            p_gen=r[1] / base,
            q_gen=r[2] / base,
            q_min=r[4] / base,
            q_max=r[3] / base,
            v_set=float(r[5]),
        )
        if bid in gens:
            old = gens[bid]
            g = dataclasses.replace(
                old,
                p_gen=old.p_gen + g.p_gen,
                q_gen=old.q_gen + g.q_gen,
                q_min=old.q_min + g.q_min,
                q_max=old.q_max + g.q_max,
            )
        gens[bid] = g

    buses = []
    for r in bus_m:
        code = int(r[1])
        if code == 4:
            continue
        if code not in _KIND_BY_CODE:
            raise ValidationError("bus_kind", f"bus {int(r[0])} has unknown type {code}")
        kind = _KIND_BY_CODE[code]
        if kind == PV and int(r[0]) not in gens:
            kind = PQ
        buses.append(
            Bus(
                id=int(r[0]),
                kind=kind,
                p_demand=r[2] / base,
                q_demand=r[3] / base,
                shunt_g=r[4] / base,
                shunt_b=r[5] / base,
                vm_init=float(r[7]),
                va_init=math.radians(r[8]),
                v_min=float(r[12]),
                v_max=float(r[11]),
            )
        )

    branches = []
    for r in br_m:
        if r[10] <= 0:
            continue
        f, t = int(r[0]), int(r[1])
        if f in isolated or t in isolated:
            continue
        amin = math.radians(r[11]) if br_m.shape[1] > 12 else 0.0
        amax = math.radians(r[12]) if br_m.shape[1] > 12 else 0.0
        if amin == 0.0 and amax == 0.0:
            amin, amax = -DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                r=float(r[2]),
                x=float(r[3]),
                b_charging=float(r[4]),
                tap=float(r[8]) if r[8] != 0 else 1.0,
                shift=math.radians(r[9]),
                ang_min=amin,
                ang_max=amax,
            )
        )

    case = NetworkCase(
        base_mva=base,
        buses=tuple(buses),
        gens=tuple(g for g in gens.values() if g.bus_id in live_bus),
        branches=tuple(branches),
        name=name,
    )
    validate_case(case)
    return case


def load_case(path: str | Path) -> NetworkCase:
    """Read and parse a case file from disk."""
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def validate_case(case: NetworkCase) -> None:
    """Raise :class:`ValidationError` naming the first broken invariant."""
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("unique_bus_ids", "duplicate bus id")
    n_slack = sum(b.kind == SLACK for b in case.buses)
    if n_slack != 1:
        raise ValidationError("single_slack", f"expected exactly one slack bus, found {n_slack}")
    known = set(ids)
    for g in case.gens:
        if g.bus_id not in known:
            raise ValidationError("gen_bus_exists", f"generator references missing bus {g.bus_id}")
        if g.q_min > g.q_max:
            raise ValidationError("q_limits_ordered", f"q_min > q_max at bus {g.bus_id}")
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise ValidationError(
                    "branch_bus_exists", f"branch {k + 1} references missing bus {end}"
                )
        if br.from_bus == br.to_bus:
            raise ValidationError("no_self_loops", f"branch {k + 1} connects bus {br.from_bus} to itself")
        if br.r * br.r + br.x * br.x <= 0.0:
            raise ValidationError("branch_impedance", f"branch {k + 1} has r = x = 0")
        if br.ang_min > br.ang_max:
            raise ValidationError("angle_limits_ordered", f"branch {k + 1} has ang_min > ang_max")
    for b in case.buses:
        if b.v_min > b.v_max:
            raise ValidationError("v_limits_ordered", f"bus {b.id} has v_min > v_max")
    n = len(case.buses)
    if n > 1:
        pos = case.bus_index()
        rows = [pos[br.from_bus] for br in case.branches]
        cols = [pos[br.to_bus] for br in case.branches]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise ValidationError("connected", f"branch graph has {n_comp} components")


def scale_voltage_limits(
    case: NetworkCase, fraction: float, vm_base: np.ndarray | None = None
) -> NetworkCase:
    """Return a copy whose PQ-bus limits are ``vm_base * (1 -/+ fraction)``.

    ``vm_base`` is indexed like ``case.buses``; by default each bus's
    ``vm_init`` is used.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if vm_base is None:
        vm_base = np.array([b.vm_init for b in case.buses])
    buses = []
    for b, v0 in zip(case.buses, vm_base):
        if b.kind == PQ:
            b = dataclasses.replace(
                b, v_min=float(v0) * (1.0 - fraction), v_max=float(v0) * (1.0 + fraction)
            )
        buses.append(b)
    return dataclasses.replace(case, buses=tuple(buses))


# ---------------------------------------------------------------------------
# debug dump


def dump_case(case: NetworkCase) -> str:
    """Serialize a case to JSON; :func:`load_case_dump` inverts it exactly."""
    return json.dumps(
        {
            "name": case.name,
            "base_mva": case.base_mva,
            "buses": [dataclasses.asdict(b) for b in case.buses],
            "gens": [dataclasses.asdict(g) for g in case.gens],
            "branches": [dataclasses.asdict(br) for br in case.branches],
        },
        indent=1,
    )


def load_case_dump(text: str) -> NetworkCase:
    d = json.loads(text)
    case = NetworkCase(
        base_mva=d["base_mva"],
        buses=tuple(Bus(**b) for b in d["buses"]),
        gens=tuple(Gen(**g) for g in d["gens"]),
        branches=tuple(Branch(**br) for br in d["branches"]),
        name=d.get("name", ""),
    )
    validate_case(case)
    return case
