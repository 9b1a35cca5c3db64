"""Time the line-bound kernel: numba build versus the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each case is solved at its stored injections, a random box around the base
is drawn, and ``nonlinear_bounds`` is timed with each kernel. The outputs are
compared so a speedup never hides a mismatch.
"""

from __future__ import annotations

import argparse
import timeit
from pathlib import Path

import numpy as np

from convres import kernels
from convres._jit import HAVE_NUMBA
from convres.envelopes import nonlinear_bounds
from convres.matpower_io import load_case
from convres.restriction import degenerate_box
from convres.study import prepare

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
CASES = ("case9", "case14", "case30", "case39", "case118")
NEEDS_ADMIT = {"case14", "case39", "case118"}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or CONVRES_DISABLE_NUMBA is set); nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'case':8} {'lines':>6} {'numba us':>10} {'numpy us':>10} {'speedup':>8} {'max diff':>9}")
    for name in CASES:
        s = prepare(load_case(DATA / f"{name}.m"), admit_base=name in NEEDS_ADMIT)
        b = degenerate_box(s.model) + rng.uniform(0.0, 0.05, s.model.a_mat.shape[0])
        fast = nonlinear_bounds(b, s.model, kernels.line_bounds_jit)
        slow = nonlinear_bounds(b, s.model, kernels.line_bounds_numpy)
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(fast, slow))
        t_jit = min(timeit.repeat(lambda: nonlinear_bounds(b, s.model, kernels.line_bounds_jit),
                                  number=args.repeat, repeat=3)) / args.repeat
        t_np = min(timeit.repeat(lambda: nonlinear_bounds(b, s.model, kernels.line_bounds_numpy),
                                 number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:8} {s.idx.n_line:6d} {t_jit * 1e6:10.1f} {t_np * 1e6:10.1f} {t_np / t_jit:8.2f} {diff:9.1e}")


if __name__ == "__main__":
    main()
