"""Sparse undirected graphs in CSR form and the normalized operators built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised when a graph cannot be constructed from the given input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Immutable symmetric graph with sorted, deduplicated CSR rows.

    Edge values are implicitly 1.0.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    @property
    def num_edges(self) -> int:
        """Number of stored (directed) entries, i.e. nnz of A."""
        return int(self.col_indices.shape[0])

    def has_self_loops(self) -> bool:
        """True if every node carries an (i, i) entry."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees)
        return int(np.count_nonzero(rows == self.col_indices)) == self.num_nodes

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with src <= dst, row-major order."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = rows <= self.col_indices
        return np.stack([rows[keep], self.col_indices[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.num_edges)
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )


@dataclass(frozen=True)
class SparseOperator:
    """Real-valued N x N operator in CSR layout (A-hat, its symmetric variant, or the Laplacian)."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(repr=False, compare=False, default=None)
    _csr_t: sp.csr_matrix = field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        if self._csr is None:
            m = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets),
                shape=(self.num_nodes, self.num_nodes),
            )
            object.__setattr__(self, "_csr", m)
            t = sp.csr_matrix(m.T)
            t.sort_indices()
            object.__setattr__(self, "_csr_t", t)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparseOperator":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        csr = m.copy()
        t = sp.csr_matrix(m.T)
        t.sort_indices()
        return cls(
            num_nodes=m.shape[0],
            row_offsets=_frozen(m.indptr.astype(np.int64)),
            col_indices=_frozen(m.indices.astype(np.int64)),
            values=_frozen(m.data.copy()),
            _csr=csr,
            _csr_t=t,
        )

    @classmethod
    def identity(cls, n: int) -> "SparseOperator":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_nodes, self.num_nodes)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseOperator":
        return SparseOperator.from_scipy(self._csr_t)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()


def build_graph(
    edges: Iterable[tuple[int, int]] | np.ndarray,
    num_nodes: int,
    add_self_loops: bool = False,
) -> Graph:
    """Symmetrize, deduplicate and sort ``edges`` into a CSR graph."""
    if num_nodes <= 0:
        raise GraphError(f"num_nodes must be positive, got {num_nodes}")
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    e = e.reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise GraphError(f"edge ({bad[0]}, {bad[1]}) out of range for {num_nodes} nodes")

    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    if add_self_loops:
        loops = np.arange(num_nodes, dtype=np.int64)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
    codes = np.unique(src * num_nodes + dst)
    rows, cols = np.divmod(codes, num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
    return Graph(num_nodes, _frozen(offsets), _frozen(cols.astype(np.int64)))


def with_self_loops(g: Graph) -> Graph:
    return build_graph(g.edge_list(), g.num_nodes, add_self_loops=True)


def normalize_adjacency(g: Graph, mode: Literal["row", "symmetric"] = "row") -> SparseOperator:
    """Row mode gives D^-1 A; symmetric mode gives D~^-1/2 (A + I) D~^-1/2."""
    if mode == "row":
        deg = g.degrees.astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        values = np.repeat(inv, g.degrees)
        m = sp.csr_matrix((values, g.col_indices, g.row_offsets), shape=(g.num_nodes,) * 2)
        return SparseOperator.from_scipy(m)
    if mode == "symmetric":
        gl = g if g.has_self_loops() else with_self_loops(g)
        dinv = 1.0 / np.sqrt(gl.degrees.astype(np.float64))
        rows = np.repeat(np.arange(gl.num_nodes), gl.degrees)
        values = dinv[rows] * dinv[gl.col_indices]
        m = sp.csr_matrix((values, gl.col_indices, gl.row_offsets), shape=(gl.num_nodes,) * 2)
        return SparseOperator.from_scipy(m)
    raise ValueError(f"unknown normalization mode {mode!r}")


def normalized_laplacian(g: Graph) -> SparseOperator:
    """I - D^-1 A (rows of nodes with degree > 0 sum to zero)."""
    a_hat = normalize_adjacency(g, "row").to_scipy()
    lap = sp.identity(g.num_nodes, format="csr") - a_hat
    lap = sp.csr_matrix(lap)
    lap.eliminate_zeros()
    return SparseOperator.from_scipy(lap)


def combinatorial_laplacian(g: Graph) -> SparseOperator:
    """D - A."""
    a = g.adjacency()
    return SparseOperator.from_scipy(sp.diags(g.degrees.astype(np.float64)) - a)


def spmm(op: SparseOperator, m: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``op @ m``; cost proportional to nnz * columns."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != op.num_nodes:
        raise ValueError(f"operator is {op.shape} but matrix has shape {m.shape}")
    return np.asarray(op.to_scipy() @ m)


def spmm_t(op: SparseOperator, m: np.ndarray) -> np.ndarray:
    """``op.T @ m`` without materializing a new operator."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != op.num_nodes:
        raise ValueError(f"operator is {op.shape} but matrix has shape {m.shape}")
    return np.asarray(op._csr_t @ m)


def is_connected(g: Graph) -> bool:
    n_comp, _ = connected_components(g.adjacency(), directed=False)
    return n_comp == 1


def read_edge_list(path: str | Path) -> np.ndarray:
    """Parse a ``src<TAB>dst`` edge file; '#' lines and blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t") if "\t" in s else s.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line.rstrip()!r}")
            try:
                out.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-integer node index in {line.rstrip()!r}") from None
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def write_edge_list(g: Graph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, d in g.edge_list():
            fh.write(f"{s}\t{d}\n")
