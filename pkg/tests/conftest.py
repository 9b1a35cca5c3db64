from __future__ import annotations

from pathlib import Path

import pytest

from convres.matpower_io import load_case, parse_case
from convres.study import prepare

DATA = Path(__file__).parent / "data"
CASES = ("case9", "case14", "case30", "case39", "case118")
# stock files whose solved base violates a limit; see README
NEEDS_ADMIT = {"case14", "case39", "case118"}


def two_bus_text(load_mw: float = 50.0, v_lim=(0.9, 1.1), ang_deg=(-360.0, 360.0), tap: float = 0.0) -> str:
    """Slack bus 1 feeding PQ bus 2 through a lossless x = 0.1 line."""
    return f"""function mpc = two_bus
% minimal test system
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1   3   0        0   0   0   1   1   0   230   1   1.1       0.9;
    2   1   {load_mw}  0   0   0   1   1   0   230   1   {v_lim[1]}  {v_lim[0]};
];
mpc.gen = [
    1   0   0   300   -300   1   100   1   300   0;
];
mpc.branch = [
    1   2   0   0.1   0   0   0   0   {tap}   0   1   {ang_deg[0]}   {ang_deg[1]};
];
"""


@pytest.fixture
def two_bus():
    return parse_case(two_bus_text(), name="two_bus")


@pytest.fixture(scope="session")
def cases():
    return {name: load_case(DATA / f"{name}.m") for name in CASES}


@pytest.fixture(scope="session")
def studies(cases):
    return {name: prepare(case, admit_base=name in NEEDS_ADMIT) for name, case in cases.items()}


@pytest.fixture(scope="session")
def case9_study(cases):
    """case9 with PQ voltage limits at 1% around the solved base."""
    return prepare(cases["case9"], vlimit=0.01)
