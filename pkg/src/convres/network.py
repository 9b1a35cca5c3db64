"""Index partitions, bus admittance and incidence matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from convres.errors import SingularBranch
from convres.matpower_io import PQ, PV, SLACK, NetworkCase

DENSE_LIMIT = 500


@dataclass(frozen=True)
class IndexMaps:
    """Bus partitions as positions into ``case.buses`` (ascending bus id)."""

    slack: int
    pv: np.ndarray
    pq: np.ndarray
    ns: np.ndarray
    lines: np.ndarray  # (n_lines, 2) from/to positions

    @property
    def n_bus(self) -> int:
        return len(self.ns) + 1

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_state(self) -> int:
        return len(self.ns) + len(self.pq)


@dataclass(frozen=True)
class Admittance:
    g: np.ndarray | sp.csr_matrix
    b: np.ndarray | sp.csr_matrix

    @property
    def y(self):
        return self.g + 1j * self.b

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.g)

    def diagonal(self) -> np.ndarray:
        if self.is_sparse:
            return self.g.diagonal() + 1j * self.b.diagonal()
        return np.diag(self.g) + 1j * np.diag(self.b)


@dataclass(frozen=True)
class BranchAdmittance:
    """Per-branch two-port entries; ``ff`` and ``tt`` land on bus diagonals."""

    ff: np.ndarray
    ft: np.ndarray
    tf: np.ndarray
    tt: np.ndarray


@dataclass(frozen=True)
class Incidence:
    e: np.ndarray
    e_ns: np.ndarray


def build_index_maps(case: NetworkCase) -> IndexMaps:
    order = np.argsort([b.id for b in case.buses], kind="stable")
    kinds = [case.buses[i].kind for i in order]
    slack = [int(i) for i, k in zip(order, kinds) if k == SLACK]
    pv = np.array([i for i, k in zip(order, kinds) if k == PV], dtype=np.int64)
    pq = np.array([i for i, k in zip(order, kinds) if k == PQ], dtype=np.int64)
    ns = np.array([i for i in order if i != slack[0]], dtype=np.int64)
    pos = case.bus_index()
    lines = np.array(
        [(pos[br.from_bus], pos[br.to_bus]) for br in case.branches], dtype=np.int64
    ).reshape(-1, 2)
    return IndexMaps(slack=slack[0], pv=pv, pq=pq, ns=ns, lines=lines)


def branch_admittances(case: NetworkCase) -> BranchAdmittance:
    """Standard pi-model entries with off-nominal tap and phase shift."""
    n = len(case.branches)
    ff = np.empty(n, complex)
    ft = np.empty(n, complex)
    tf = np.empty(n, complex)
    tt = np.empty(n, complex)
    for k, br in enumerate(case.branches):
        z = complex(br.r, br.x)
        if z == 0:
            raise SingularBranch(f"branch {k + 1} ({br.from_bus}-{br.to_bus}) has zero impedance")
        ys = 1.0 / z
        tap = br.tap * np.exp(1j * br.shift)
        tt[k] = ys + 0.5j * br.b_charging
        ff[k] = tt[k] / (br.tap * br.tap)
        ft[k] = -ys / np.conj(tap)
        tf[k] = -ys / tap
    return BranchAdmittance(ff=ff, ft=ft, tf=tf, tt=tt)


def build_admittance(case: NetworkCase, dense_limit: int = DENSE_LIMIT) -> Admittance:
    n = len(case.buses)
    ba = branch_admittances(case)
    pos = case.bus_index()
    f = np.array([pos[br.from_bus] for br in case.branches], dtype=np.int64)
    t = np.array([pos[br.to_bus] for br in case.branches], dtype=np.int64)
    shunt = np.array([complex(b.shunt_g, b.shunt_b) for b in case.buses])
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    vals = np.concatenate([ba.ff, ba.ft, ba.tf, ba.tt, shunt])
    y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if n <= dense_limit:
        y = y.toarray()
        return Admittance(g=y.real.copy(), b=y.imag.copy())
    return Admittance(g=y.real.tocsr(), b=y.imag.tocsr())


def build_incidence(case: NetworkCase, idx: IndexMaps) -> Incidence:
    n, m = idx.n_bus, idx.n_line
    e = np.zeros((n, m), dtype=np.int64)
    cols = np.arange(m)
    e[idx.lines[:, 0], cols] += 1
    e[idx.lines[:, 1], cols] -= 1
    return Incidence(e=e, e_ns=e[idx.ns, :])
