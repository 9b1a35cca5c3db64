"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal invariant breach (a diagnostic dump goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from convres import selftest as st
from convres.errors import ConvresError, SoundnessViolation
from convres.matpower_io import SLACK, load_case
from convres.network import build_admittance, build_index_maps
from convres.powerflow import Diverged, base_control, check_operational, nr_solve
from convres.restriction import certify
from convres.scan import THREADS_ENV, ScanSpec, cross_section, emit_csv, emit_svg, noncontiguous_lines
from convres.study import prepare

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _num(x: float) -> str:
    return f"{x:.9g}"


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"LO must not exceed HI in {text!r}")
    return lo, hi


def _delta(text: str) -> tuple[int, float]:
    try:
        bus, val = text.split("=")
        return int(bus), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected BUS=DELTA, got {text!r}") from None


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"must be at least 2, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="convres", description="Certify AC power flow feasibility by convex restriction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("info", help="print a network summary")
    s.add_argument("case", type=Path)

    s = sub.add_parser("pf", help="solve the power flow and check limits")
    s.add_argument("case", type=Path)
    s.add_argument("--scale-p", type=float, default=1.0, metavar="F",
                   help="multiply every non-slack active injection by F")

    def model_flags(s):
        s.add_argument("--vlimit", type=_fraction, default=None, metavar="F",
                       help="set PQ voltage limits to v0*(1 -/+ F) around the solved base")
        s.add_argument("--admit-base", action="store_true",
                       help="widen limits the solved base violates so it becomes feasible")
        s.add_argument("--admit-margin", type=float, default=1e-3, metavar="PU")

    s = sub.add_parser("certify", help="certify a perturbed injection vector")
    s.add_argument("case", type=Path)
    s.add_argument("--dp", type=_delta, action="append", default=[], metavar="BUS=DELTA",
                   help="add DELTA pu to the active injection at BUS (repeatable)")
    model_flags(s)

    s = sub.add_parser("scan", help="grid scan over two injections",
                       epilog=f"Thread count: environment variable {THREADS_ENV}.")
    s.add_argument("case", type=Path)
    s.add_argument("--bus1", type=int, required=True)
    s.add_argument("--bus2", type=int, required=True)
    s.add_argument("--range", type=_range, required=True, metavar="LO:HI")
    s.add_argument("--res", type=_positive_int, required=True, metavar="N")
    s.add_argument("--csv", type=Path, required=True, metavar="PATH")
    s.add_argument("--svg", type=Path, default=None, metavar="PATH")
    s.add_argument("--truth", action="store_true", help="check every cell against Newton-Raphson")
    model_flags(s)

    s = sub.add_parser("selftest", help="run the sampling checks on a case")
    s.add_argument("case", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, default=100_000, help="samples per envelope family")
    return p


def _load(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"case file not found: {path}")
    return load_case(path)


def cmd_info(args, out) -> int:
    case = _load(args.case)
    idx = build_index_maps(case)
    adm = build_admittance(case)
    slack_id = case.buses[idx.slack].id
    print(f"case: {case.name or args.case.name}", file=out)
    print(f"base_mva: {_num(case.base_mva)}", file=out)
    print(f"buses: {idx.n_bus} (slack 1, pv {len(idx.pv)}, pq {len(idx.pq)})", file=out)
    print(f"slack_bus: {slack_id}", file=out)
    print(f"generators: {len(case.gens)}", file=out)
    print(f"branches: {idx.n_line}", file=out)
    print(f"admittance: {'sparse' if adm.is_sparse else 'dense'}", file=out)
    print(f"total_p_demand_pu: {_num(sum(b.p_demand for b in case.buses))}", file=out)
    print(f"total_q_demand_pu: {_num(sum(b.q_demand for b in case.buses))}", file=out)
    return EXIT_OK


def cmd_pf(args, out) -> int:
    case = _load(args.case)
    idx = build_index_maps(case)
    adm = build_admittance(case)
    u = base_control(case, idx)
    u = u.with_p(u.p_ns * args.scale_p)
    try:
        state = nr_solve(case, adm, idx, u)
    except Diverged as exc:
        print(f"power flow diverged: {exc}", file=sys.stderr)
        return EXIT_DATA
    rep = check_operational(case, idx, state, adm)
    print("bus,type,vm,va_deg", file=out)
    for i, b in enumerate(case.buses):
        print(f"{b.id},{b.kind},{_num(state.vm[i])},{_num(np.degrees(state.va[i]))}", file=out)
    print(f"feasible: {'yes' if rep.feasible else 'no'}", file=out)
    print(f"worst_violation: {_num(rep.worst())}", file=out)
    ids = [b.id for b in case.buses]
    for k, i in enumerate(rep.gen_buses):
        if rep.q_violation[k] > 0:
            print(f"violation: reactive limit at bus {ids[i]} by {_num(rep.q_violation[k])} pu", file=out)
    for k, i in enumerate(idx.pq):
        if rep.v_violation[k] > 0:
            print(f"violation: voltage limit at bus {ids[i]} by {_num(rep.v_violation[k])} pu", file=out)
    for k, br in enumerate(case.branches):
        if rep.ang_violation[k] > 0:
            print(f"violation: angle limit on {br.from_bus}-{br.to_bus} by {_num(rep.ang_violation[k])} rad",
                  file=out)
    return EXIT_OK


def _prepare(args):
    study = prepare(_load(args.case), vlimit=args.vlimit, admit_base=args.admit_base, margin=args.admit_margin)
    for note in study.notes:
        print(f"admitted: {note}", file=sys.stderr)
    return study


def cmd_certify(args, out) -> int:
    study = _prepare(args)
    pos = study.case.bus_index()
    ns = [int(i) for i in study.idx.ns]
    p = study.u0.p_ns.copy()
    for bus, delta in args.dp:
        if bus not in pos:
            raise UsageError(f"--dp: unknown bus {bus}")
        if study.case.buses[pos[bus]].kind == SLACK:
            raise UsageError(f"--dp: bus {bus} is the slack")
        p[ns.index(pos[bus])] += delta
    cert = certify(study.u0.with_p(p), study.model)
    print(cert.to_json(), file=out)
    return EXIT_OK


def cmd_scan(args, out) -> int:
    study = _prepare(args)
    try:
        spec = ScanSpec.for_buses(
            study.model, study.case, args.bus1, args.bus2, args.range, args.res, ground_truth=args.truth
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = cross_section(study.model, study.case, spec, study.adm)
    emit_csv(result, args.csv)
    if args.svg is not None:
        emit_svg(result, args.svg)
    c = result.counts()
    print(f"cells: {c['cells']}", file=out)
    print(f"certified: {c['certified']}", file=out)
    if args.truth:
        print(f"feasible: {c['feasible']}", file=out)
        print(f"certified_and_feasible: {c['certified_feasible']}", file=out)
        print(f"soundness_violations: {c['unsound']}", file=out)
        print(f"coverage: {_num(result.coverage())}", file=out)
    split = noncontiguous_lines(result)
    print(f"noncontiguous_grid_lines: {len(split)}", file=out)
    return EXIT_OK


def cmd_selftest(args, out) -> int:
    print(f"seed: {args.seed}", file=out)
    case = _load(args.case)
    results = st.run_all(case, seed=args.seed, samples=args.samples)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}", file=out)
    return EXIT_OK if ok else EXIT_INTERNAL


COMMANDS = {
    "info": cmd_info,
    "pf": cmd_pf,
    "certify": cmd_certify,
    "scan": cmd_scan,
    "selftest": cmd_selftest,
}


def _glue_values(argv: Sequence[str]) -> list[str]:
    """Attach a value such as ``-1.0:1.0`` to its option so argparse keeps it."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_OPTIONS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


_VALUE_OPTIONS = {"--range", "--dp", "--scale-p"}


def run(argv: Sequence[str] | None = None, out=None) -> int:
    """Parse ``argv`` and run the subcommand; returns the exit code."""
    out = out or sys.stdout
    argv = _glue_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SoundnessViolation as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, indent=2), file=sys.stderr)
        return EXIT_INTERNAL
    except (OSError, ConvresError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
