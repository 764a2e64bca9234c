"""Sparse graph storage and the normalized operators consumed by the propagation layers.

All operators are built once per graph and never mutated afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseMatrixCSR:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        if offsets.shape != (self.n_rows + 1,) or offsets[0] != 0:
            raise ValueError("row_offsets must have length n_rows+1 and start at 0")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if offsets[-1] != len(cols) or len(cols) != len(vals):
            raise ValueError("row_offsets[-1], col_indices and values disagree in length")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValueError("column index out of range")
        row_of = np.repeat(np.arange(self.n_rows), np.diff(offsets))
        same_row = row_of[1:] == row_of[:-1]
        bad = same_row & (np.diff(cols) <= 0)
        if np.any(bad):
            r = int(row_of[1:][bad][0])
            raise ValueError(f"column indices in row {r} are not strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> SparseMatrixCSR:
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, d) -> SparseMatrixCSR:
        return cls.from_scipy(sp.csr_matrix(np.asarray(d, dtype=np.float64)))

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    @cached_property
    def T(self) -> SparseMatrixCSR:
        return SparseMatrixCSR.from_scipy(self._csr.T.tocsr())

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()


def spmm(S: SparseMatrixCSR, H: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``S @ H``; each output row depends only on one row of S."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or S.n_cols != H.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {S.shape} @ {H.shape}")
    return np.asarray(S._csr @ H)


@dataclass(frozen=True)
class Graph:
    """Undirected, unweighted graph with a canonical edge list (u < v, sorted, unique)."""

    n_nodes: int
    edges: np.ndarray = field(repr=False)
    self_loops_added: bool = False

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n_nodes < 0:
            raise ValueError("n_nodes must be nonnegative")
        if len(e):
            if e.min() < 0 or e.max() >= self.n_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("raw edge list must not contain self-loops")
        e = np.sort(e, axis=1)
        canon = np.unique(e, axis=0)
        if len(canon) != len(e):
            raise ValueError("duplicate undirected edge")
        object.__setattr__(self, "edges", canon)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, dedupe: bool = True) -> Graph:
        """Build a graph, dropping self-loops and duplicate pairs when ``dedupe`` is set."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if dedupe and len(e):
            e = np.sort(e, axis=1)
            e = e[e[:, 0] != e[:, 1]]
            e = np.unique(e, axis=0)
        return cls(n_nodes, e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        ones = np.ones(len(u))
        a = sp.coo_matrix((np.r_[ones, ones], (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return a.tocsr()


@dataclass(frozen=True, eq=False)
class GraphOperators:
    A: SparseMatrixCSR
    L: SparseMatrixCSR
    incidence: SparseMatrixCSR
    degrees: np.ndarray
    self_loops: bool
    graph: Graph = field(repr=False)


def build_operators(g: Graph, add_self_loops: bool = True) -> GraphOperators:
    """Normalized adjacency, Laplacian and edge incidence matrix of ``g``.

    Degrees count the self-loop when one is added. Nodes of degree zero get a
    zero row/column in A, L and the incidence matrix, which keeps
    ``incidence.T @ incidence == L`` exact for every graph.
    """
    if g.n_nodes == 0:
        raise ValueError("empty graph")
    n = g.n_nodes
    adj = g.adjacency()
    if add_self_loops:
        adj = adj + sp.identity(n, format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        dinv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)

    # A is built from the upper triangle and mirrored so A[i, j] == A[j, i] bitwise
    coo = sp.triu(adj, format="coo")
    w = dinv[coo.row] * dinv[coo.col] * coo.data
    off = coo.row != coo.col
    rows = np.r_[coo.row, coo.col[off]]
    cols = np.r_[coo.col, coo.row[off]]
    A = sp.csr_matrix((np.r_[w, w[off]], (rows, cols)), shape=(n, n))

    # L = I - A on nodes with positive degree
    diag = (deg > 0).astype(np.float64)
    L = (sp.diags(diag) - A).tocsr()
    L.eliminate_zeros()

    u, v = g.edges[:, 0], g.edges[:, 1]
    m = len(u)
    er = np.r_[np.arange(m), np.arange(m)]
    inc = sp.csr_matrix((np.r_[dinv[u], -dinv[v]], (er, np.r_[u, v])), shape=(m, n))

    return GraphOperators(
        A=SparseMatrixCSR.from_scipy(A),
        L=SparseMatrixCSR.from_scipy(L),
        incidence=SparseMatrixCSR.from_scipy(inc),
        degrees=deg,
        self_loops=add_self_loops,
        graph=g,
    )
