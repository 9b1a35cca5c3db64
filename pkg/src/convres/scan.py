"""Two-dimensional cross sections of the certified region.

Two non-slack active injections are swept over a grid while every other
control stays at its base value. Each cell is certified and, optionally,
checked against the Newton-Raphson oracle; a cell that is certified but
not feasible aborts the scan with :class:`SoundnessViolation`.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterator
from xml.sax.saxutils import escape

import numpy as np

from convres.basis import RestrictionModel, state_to_x
from convres.errors import SoundnessViolation
from convres.matpower_io import NetworkCase
from convres.network import Admittance, build_admittance
from convres.powerflow import (
    Diverged,
    PolarState,
    check_operational,
    flat_start,
    nr_solve,
)
from convres.restriction import Certificate, CertifyOptions, certify

FEASIBLE = "Feasible"
INFEASIBLE = "InfeasibleConstraint"
DIVERGED = "Diverged"
SKIPPED = "Skipped"
TRUTH_LABELS = (FEASIBLE, INFEASIBLE, DIVERGED, SKIPPED)

THREADS_ENV = "CONVRES_THREADS"
ENCLOSURE_TOL = 1e-6
CSV_HEADER = ("u1", "u2", "certified", "truth", "iterations")


@dataclass(frozen=True)
class ScanSpec:
    """Grid definition.

    ``axis1``/``axis2`` are positions in ``idx.ns`` (not bus ids); the ranges
    are offsets in pu added to the base injections.
    """

    axis1: int
    axis2: int
    range1: tuple[float, float]
    range2: tuple[float, float]
    resolution: int
    ground_truth: bool = True
    feas_tol: float = 1e-6

    def __post_init__(self):
        if self.axis1 == self.axis2:
            raise ValueError("axis1 and axis2 must differ")
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")
        for r in (self.range1, self.range2):
            if len(r) != 2 or not r[0] <= r[1]:
                raise ValueError(f"range must be (lo, hi) with lo <= hi, got {r}")

    @classmethod
    def for_buses(
        cls,
        model: RestrictionModel,
        case: NetworkCase,
        bus1: int,
        bus2: int,
        rng: tuple[float, float],
        resolution: int,
        ground_truth: bool = True,
    ) -> "ScanSpec":
        """Build a spec from MATPOWER bus ids, using one range for both axes."""
        pos = case.bus_index()
        ns = [int(i) for i in model.idx.ns]
        axes = []
        for bus in (bus1, bus2):
            if bus not in pos:
                raise ValueError(f"unknown bus {bus}")
            if pos[bus] not in ns:
                raise ValueError(f"bus {bus} is the slack; its injection is not a control")
            axes.append(ns.index(pos[bus]))
        return cls(axes[0], axes[1], tuple(rng), tuple(rng), resolution, ground_truth)


@dataclass
class Cell:
    u1: float
    u2: float
    certified: bool
    truth: str
    iterations: int
    reason: str | None = None
    b_star: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ScanResult:
    """Cells in row-major order: row ``i`` holds ``u2 = values2[i]``."""

    spec: ScanSpec
    values1: np.ndarray
    values2: np.ndarray
    base1: float
    base2: float
    cells: list[Cell]
    bus1: int | None = None
    bus2: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.values2), len(self.values1)

    def cell(self, i: int, j: int) -> Cell:
        return self.cells[i * len(self.values1) + j]

    def certified_mask(self) -> np.ndarray:
        return np.array([c.certified for c in self.cells]).reshape(self.shape)

    def truth_grid(self) -> np.ndarray:
        return np.array([c.truth for c in self.cells], dtype=object).reshape(self.shape)

    def counts(self) -> dict[str, int]:
        cert = self.certified_mask().ravel()
        truth = self.truth_grid().ravel()
        feas = truth == FEASIBLE
        return {
            "cells": len(self.cells),
            "certified": int(cert.sum()),
            "feasible": int(feas.sum()),
            "certified_feasible": int((cert & feas).sum()),
            "unsound": int((cert & (truth != FEASIBLE) & (truth != SKIPPED)).sum()),
        }

    def coverage(self) -> float:
        """Certified share of the ground-truth feasible cells (nan without truth)."""
        c = self.counts()
        return c["certified_feasible"] / c["feasible"] if c["feasible"] else float("nan")


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _ground_truth(
    case: NetworkCase, adm: Admittance, model: RestrictionModel, u, feas_tol: float
) -> tuple[str, PolarState | None, float]:
    idx = model.idx
    state = None
    for start in (model.base_state, flat_start(case, idx, u)):
        try:
            state = nr_solve(case, adm, idx, u, start)
            break
        except Diverged:
            continue
    if state is None:
        return DIVERGED, None, float("inf")
    worst = check_operational(case, idx, state, adm).worst()
    return (FEASIBLE if worst <= feas_tol else INFEASIBLE), state, worst


def _dump(u, cert: Certificate, truth: str, state: PolarState | None, worst: float, excess=None) -> dict:
    dump = {
        "p_ns": [float(f"{v:.9g}") for v in u.p_ns],
        "truth": truth,
        "worst_limit_violation": float(f"{worst:.9g}") if np.isfinite(worst) else None,
        "certificate": cert.to_dict(),
    }
    if state is not None:
        dump["state"] = {
            "va": [float(f"{v:.9g}") for v in state.va],
            "vm": [float(f"{v:.9g}") for v in state.vm],
        }
    if excess is not None:
        dump["enclosure_excess"] = float(f"{excess:.9g}")
    return dump


def cross_section(
    model: RestrictionModel,
    case: NetworkCase,
    spec: ScanSpec,
    adm: Admittance | None = None,
    options: CertifyOptions | None = None,
    threads: int | None = None,
) -> ScanResult:
    """Certify (and optionally verify) every grid cell.

    Cells run on a thread pool sized by ``threads`` or the ``CONVRES_THREADS``
    environment variable; the result order never depends on scheduling.

    Raises:
        SoundnessViolation: a certified cell is not feasible, or its power
            flow solution lies outside the certified box.
        ValueError: the model was not built for ``case``, or an axis is out
            of range.
    """
    idx = model.idx
    if len(case.buses) != idx.n_bus or len(case.branches) != idx.n_line:
        raise ValueError("model was built for a different network")
    n_ns = len(idx.ns)
    for ax in (spec.axis1, spec.axis2):
        if not 0 <= ax < n_ns:
            raise ValueError(f"axis {ax} outside 0..{n_ns - 1}")
    adm = adm if adm is not None else build_admittance(case)
    u0 = model.base_u
    base1 = float(u0.p_ns[spec.axis1])
    base2 = float(u0.p_ns[spec.axis2])
    values1 = base1 + np.linspace(spec.range1[0], spec.range1[1], spec.resolution)
    values2 = base2 + np.linspace(spec.range2[0], spec.range2[1], spec.resolution)
    points = [(a, b) for b in values2 for a in values1]

    def run(point):
        p = u0.p_ns.copy()
        p[spec.axis1], p[spec.axis2] = point
        u = u0.with_p(p)
        cert = certify(u, model, options)
        truth, state, worst = SKIPPED, None, float("nan")
        if spec.ground_truth:
            truth, state, worst = _ground_truth(case, adm, model, u, spec.feas_tol)
        return u, cert, truth, state, worst

    cells: list[Cell] = []
    with ThreadPoolExecutor(max_workers=_threads(threads)) as pool:
        try:
            for (a, b), (u, cert, truth, state, worst) in zip(points, pool.map(run, points)):
                if cert.certified and spec.ground_truth:
                    if truth != FEASIBLE:
                        raise SoundnessViolation(
                            f"cell ({a:.9g}, {b:.9g}) is certified but ground truth says {truth}",
                            _dump(u, cert, truth, state, worst),
                        )
                    excess = float(np.max(model.a_mat @ state_to_x(state, idx) - cert.b_vector()))
                    if excess > ENCLOSURE_TOL:
                        raise SoundnessViolation(
                            f"cell ({a:.9g}, {b:.9g}) solution leaves the certified box by {excess:.3g}",
                            _dump(u, cert, truth, state, worst, excess),
                        )
                cells.append(
                    Cell(
                        u1=float(a),
                        u2=float(b),
                        certified=cert.certified,
                        truth=truth,
                        iterations=cert.iterations,
                        reason=cert.reason,
                        b_star=cert.b_vector() if cert.certified else None,
                    )
                )
        except BaseException:
            pool.shutdown(wait=False, cancel_futures=True)
            raise
    bus_ids = [b.id for b in case.buses]
    return ScanResult(
        spec=spec,
        values1=values1,
        values2=values2,
        base1=base1,
        base2=base2,
        cells=cells,
        bus1=bus_ids[int(idx.ns[spec.axis1])],
        bus2=bus_ids[int(idx.ns[spec.axis2])],
    )


def split_runs(mask_row: np.ndarray) -> int:
    """Number of maximal runs of ``True`` in a boolean row."""
    m = np.asarray(mask_row, dtype=bool).astype(np.int8)
    return int(np.sum(np.diff(np.concatenate([[0], m])) == 1))


def noncontiguous_lines(result: ScanResult) -> list[tuple[str, int]]:
    """Rows and columns whose certified cells are split into several runs.

    A convex certified region meets every grid line in one run, so an entry
    here points at nonconvexity (or at a witness the search missed).
    """
    mask = result.certified_mask()
    out = [("row", i) for i in range(mask.shape[0]) if split_runs(mask[i]) > 1]
    out += [("col", j) for j in range(mask.shape[1]) if split_runs(mask[:, j]) > 1]
    return out


@contextmanager
def _text_sink(sink) -> Iterator[IO[str]]:
    if isinstance(sink, (str, os.PathLike)):
        with open(Path(sink), "w", encoding="utf-8", newline="") as fh:
            yield fh
    else:
        yield sink


def _num(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(result: ScanResult, sink) -> None:
    """Write ``u1,u2,certified,truth,iterations`` rows (LF endings).

    ``sink`` is a path or a text stream; ``u1``/``u2`` are absolute
    injections in pu.
    """
    with _text_sink(sink) as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(CSV_HEADER)
        for c in result.cells:
            writer.writerow([_num(c.u1), _num(c.u2), "true" if c.certified else "false", c.truth, c.iterations])


def read_csv(source) -> list[dict]:
    """Parse a file written by :func:`emit_csv` back into typed rows."""
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "u1": float(r["u1"]),
                "u2": float(r["u2"]),
                "certified": r["certified"] == "true",
                "truth": r["truth"],
                "iterations": int(r["iterations"]),
            }
        )
    return rows


@dataclass(frozen=True)
class SvgStyle:
    cell_px: int | None = None
    certified: str = "#1b7837"
    feasible: str = "#a6dba0"
    infeasible: str = "#e7e7e7"
    diverged: str = "#9e9e9e"
    unknown: str = "#ffffff"
    marker: str = "#d6604d"
    title: str | None = None


def _cell_color(c: Cell, style: SvgStyle) -> str:
    if c.certified:
        return style.certified
    return {
        FEASIBLE: style.feasible,
        INFEASIBLE: style.infeasible,
        DIVERGED: style.diverged,
    }.get(c.truth, style.unknown)


def emit_svg(result: ScanResult, sink, style: SvgStyle | None = None) -> None:
    """Render the grid as a standalone SVG with legend, axes and base marker.

    Cells are ``<rect class="cell">``; output is byte-identical for
    identical inputs.
    """
    st = style or SvgStyle()
    ny, nx = result.shape
    px = st.cell_px or max(4, 480 // max(nx, ny))
    left, top, bottom, legend_w = 70, 40, 56, 210
    w_plot, h_plot = nx * px, ny * px
    width, height = left + w_plot + legend_w, top + h_plot + bottom
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect class="background" x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    title = st.title or f"cross section: bus {result.bus1} vs bus {result.bus2}"
    lines.append(f'<text class="title" x="{left}" y="{top - 16}" font-size="13">{escape(title)}</text>')
    lines.append('<g class="cells" shape-rendering="crispEdges">')
    for i in range(ny):
        y = top + (ny - 1 - i) * px  # larger u2 drawn higher
        for j in range(nx):
            c = result.cell(i, j)
            lines.append(
                f'<rect class="cell" x="{left + j * px}" y="{y}" width="{px}" height="{px}" '
                f'fill="{_cell_color(c, st)}"/>'
            )
    lines.append("</g>")

    # axes and ticks at the grid ends and middle
    x0, y0 = left, top + h_plot
    lines.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0 + w_plot}" y2="{y0}" stroke="#000000"/>')
    lines.append(f'<line class="axis" x1="{x0}" y1="{top}" x2="{x0}" y2="{y0}" stroke="#000000"/>')
    for j in sorted({0, (nx - 1) // 2, nx - 1}):
        tx = left + j * px + px / 2
        lines.append(f'<line class="tick" x1="{tx:.1f}" y1="{y0}" x2="{tx:.1f}" y2="{y0 + 4}" stroke="#000000"/>')
        lines.append(
            f'<text class="tick-label" x="{tx:.1f}" y="{y0 + 16}" text-anchor="middle">'
            f"{result.values1[j]:.4g}</text>"
        )
    for i in sorted({0, (ny - 1) // 2, ny - 1}):
        ty = top + (ny - 1 - i) * px + px / 2
        lines.append(f'<line class="tick" x1="{x0 - 4}" y1="{ty:.1f}" x2="{x0}" y2="{ty:.1f}" stroke="#000000"/>')
        lines.append(
            f'<text class="tick-label" x="{x0 - 6}" y="{ty + 4:.1f}" text-anchor="end">'
            f"{result.values2[i]:.4g}</text>"
        )
    lines.append(
        f'<text class="axis-label" x="{left + w_plot / 2:.1f}" y="{y0 + 36}" text-anchor="middle">'
        f"p at bus {result.bus1} (pu)</text>"
    )
    lines.append(
        f'<text class="axis-label" x="16" y="{top + h_plot / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + h_plot / 2:.1f})">p at bus {result.bus2} (pu)</text>'
    )

    # base point marker, placed by linear interpolation on the grid
    def frac(v, vals):
        lo, hi = vals[0], vals[-1]
        return 0.5 if hi == lo else (v - lo) / (hi - lo)

    fx, fy = frac(result.base1, result.values1), frac(result.base2, result.values2)
    if 0.0 <= fx <= 1.0 and 0.0 <= fy <= 1.0:
        mx = left + px / 2 + fx * (nx - 1) * px
        my = top + px / 2 + (1.0 - fy) * (ny - 1) * px
        lines.append(
            f'<circle class="base-marker" cx="{mx:.1f}" cy="{my:.1f}" r="{max(3, px // 3)}" '
            f'fill="none" stroke="{st.marker}" stroke-width="2"/>'
        )

    entries = [
        (st.certified, "certified"),
        (st.feasible, "feasible, not certified"),
        (st.infeasible, "limit violated"),
        (st.diverged, "power flow diverged"),
        (st.unknown, "not checked"),
    ]
    lx = left + w_plot + 20
    lines.append('<g class="legend">')
    for k, (color, label) in enumerate(entries):
        ly = top + k * 20
        lines.append(
            f'<rect class="legend-swatch" x="{lx}" y="{ly}" width="12" height="12" '
            f'fill="{color}" stroke="#555555"/>'
        )
        lines.append(f'<text class="legend-label" x="{lx + 18}" y="{ly + 10}">{escape(label)}</text>')
    ly = top + len(entries) * 20
    lines.append(
        f'<circle class="legend-marker" cx="{lx + 6}" cy="{ly + 6}" r="4" fill="none" '
        f'stroke="{st.marker}" stroke-width="2"/>'
    )
    lines.append(f'<text class="legend-label" x="{lx + 18}" y="{ly + 10}">base point</text>')
    lines.append("</g>")
    lines.append("</svg>")
    with _text_sink(sink) as fh:
        fh.write("\n".join(lines) + "\n")
