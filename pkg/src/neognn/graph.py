"""Immutable sparse graphs and the sparse kernels built on them.

Matrices are stored in canonical CSR form (sorted column indices, no
duplicates, explicit zeros pruned).  Products are delegated to
``scipy.sparse`` and re-canonicalised afterwards, which keeps every result
deterministic: scipy accumulates each output row in a fixed traversal order.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError

log = logging.getLogger(__name__)

MERGE_POLICIES = ("sum", "binary")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real-valued CSR matrix.

    ``row_offsets`` has ``num_rows + 1`` entries, ``col_indices`` are strictly
    increasing within a row and ``values`` holds 64-bit floats.
    """

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("row_offsets", "col_indices", "values"):
            getattr(self, name).setflags(write=False)

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return int(self.values.shape[0])

    @classmethod
    def from_scipy(cls, mat, tau=0.0):
        """Canonicalise any scipy sparse matrix, dropping entries with ``|v| <= tau``."""
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        keep = np.abs(csr.data) > tau
        if not keep.all():
            rows = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
            csr = sp.csr_matrix(
                (csr.data[keep], (rows[keep], csr.indices[keep])), shape=csr.shape
            )
            csr.sort_indices()
        return cls(
            int(csr.shape[0]),
            int(csr.shape[1]),
            csr.indptr.astype(np.int64),
            csr.indices.astype(np.int64),
            csr.data.astype(np.float64),
        )

    @classmethod
    def from_dense(cls, dense, tau=0.0):
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)), tau)

    @classmethod
    def identity(cls, n):
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def diagonal(cls, values):
        """Exactly diagonal matrix; zero diagonal entries are still stored."""
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        return cls(n, n, np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64), values.copy())

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    def to_dense(self):
        return self.to_scipy().toarray()

    def row(self, i):
        """Column indices and values stored in row ``i``."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_ids(self):
        """Row index of every stored entry, aligned with ``values``."""
        return np.repeat(np.arange(self.num_rows, dtype=np.int64), np.diff(self.row_offsets))

    def row_sums(self):
        return np.bincount(self.row_ids(), weights=self.values, minlength=self.num_rows).astype(np.float64)

    def binarized(self):
        return SparseMatrix(
            self.num_rows, self.num_cols, self.row_offsets.copy(), self.col_indices.copy(),
            np.ones_like(self.values),
        )

    def transpose(self):
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def is_symmetric(self, tol=0.0):
        if self.num_rows != self.num_cols:
            return False
        diff = self.to_scipy() - self.to_scipy().T
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= tol

    def digest(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype=np.int64).tobytes())
        for arr in (self.row_offsets, self.col_indices, self.values):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def spmm(a, b, tau=0.0):
    """Sparse product ``a @ b`` with entries ``|v| <= tau`` dropped."""
    if a.num_cols != b.num_rows:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return SparseMatrix.from_scipy(a.to_scipy() @ b.to_scipy(), tau)


def add_scaled(a, b, scale):
    """``a + scale * b`` in canonical CSR form (explicit zeros pruned)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return SparseMatrix.from_scipy(a.to_scipy() + scale * b.to_scipy())


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Adjacency powers ``A^1..A^L`` and their decayed sum ``sum_l beta^(l-1) A^l``."""

    hops: int
    beta: float
    tau: float
    matrices: tuple
    combined: SparseMatrix


def power_series(a, hops, beta, tau=0.0):
    """Precompute the adjacency powers used by the multi-hop overlap aggregation.

    Each power is pruned by ``tau`` before being multiplied again, so with
    ``tau > 0`` the higher powers are lower bounds of the exact ones.
    Uses the ``0**0 == 1`` convention, hence ``beta == 0`` reduces to ``A``.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if beta < 0 or tau < 0:
        raise ValueError("beta and tau must be non-negative")
    matrices = [SparseMatrix.from_scipy(a.to_scipy(), tau)]
    combined = matrices[0]
    for l in range(2, hops + 1):
        matrices.append(spmm(matrices[-1], a, tau))
        weight = float(beta) ** (l - 1)
        if weight != 0.0:
            combined = add_scaled(combined, matrices[-1], weight)
    return PowerSeries(int(hops), float(beta), float(tau), tuple(matrices), combined)


def gcn_normalize(a):
    """Symmetric GCN propagation matrix ``D~^-1/2 (A + I) D~^-1/2``."""
    if a.num_rows != a.num_cols:
        raise ValueError("adjacency must be square")
    a_hat = a.to_scipy() + sp.identity(a.num_rows, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sp.diags(inv_sqrt)
    return SparseMatrix.from_scipy(scale @ a_hat @ scale)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with symmetric CSR adjacency and weighted degrees."""

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, canonical u < v, sorted
    weights: np.ndarray  # (E,) float64, merged weights
    adjacency: SparseMatrix
    degrees: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_edges(self):
        return int(self.edges.shape[0])

    def neighbors(self, i):
        return self.adjacency.row(i)[0]

    def binary_adjacency(self):
        if "binary" not in self._cache:
            self._cache["binary"] = self.adjacency.binarized()
        return self._cache["binary"]

    def binary_degrees(self):
        return np.diff(self.adjacency.row_offsets).astype(np.float64)

    def has_edge(self, u, v):
        cols = self.neighbors(u)
        k = np.searchsorted(cols, v)
        return bool(k < cols.shape[0] and cols[k] == v)

    def edge_keys(self):
        """Sorted ``u * N + v`` keys of the canonical (u < v) edges."""
        return self.edges[:, 0] * self.num_nodes + self.edges[:, 1]

    def digest(self):
        return self.adjacency.digest()


def build_graph(edge_list, num_nodes=None, merge="sum", line_numbers=None, source=None):
    """Build an undirected :class:`Graph` from ``(i, j)`` or ``(i, j, w)`` tuples.

    Duplicate edges (in either orientation) are merged by summing weights, or
    clamped to 1 with ``merge="binary"``.  Self-loops are dropped.

    :param line_numbers: optional per-edge line numbers used in error messages
    :param source: optional file name used in error messages
    """
    if merge not in MERGE_POLICIES:
        raise ValueError(f"unknown merge policy {merge!r}")
    src, dst, wts = [], [], []
    for idx, e in enumerate(edge_list):
        line = line_numbers[idx] if line_numbers is not None else None
        if len(e) not in (2, 3):
            raise DataError(f"edge {e!r} must be (i, j) or (i, j, w)", source, line)
        i, j = int(e[0]), int(e[1])
        w = float(e[2]) if len(e) == 3 else 1.0
        if i < 0 or j < 0 or (num_nodes is not None and (i >= num_nodes or j >= num_nodes)):
            raise DataError(f"node index out of range in edge ({i}, {j})", source, line)
        if not np.isfinite(w) or w <= 0:
            raise DataError(f"edge ({i}, {j}) has non-positive weight {w}", source, line)
        src.append(i)
        dst.append(j)
        wts.append(w)
    if num_nodes is None:
        num_nodes = max(max(src, default=-1), max(dst, default=-1)) + 1
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    wts = np.asarray(wts, dtype=np.float64)

    loops = src == dst
    if loops.any():
        log.warning("dropping %d self-loop(s)", int(loops.sum()))
        src, dst, wts = src[~loops], dst[~loops], wts[~loops]

    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    upper = sp.coo_matrix((wts, (lo, hi)), shape=(num_nodes, num_nodes)).tocsr()
    upper.sum_duplicates()
    upper.sort_indices()
    if merge == "binary":
        upper.data[:] = 1.0
    coo = upper.tocoo()
    edges = np.stack([coo.row, coo.col], axis=1).astype(np.int64).reshape(-1, 2)
    weights = coo.data.astype(np.float64)
    adjacency = SparseMatrix.from_scipy(upper + upper.T)
    degrees = adjacency.row_sums()
    return Graph(int(num_nodes), edges, weights, adjacency, degrees)


def subgraph_without(g, removed_pairs):
    """Copy of ``g`` with the given undirected pairs removed."""
    removed = np.asarray(removed_pairs, dtype=np.int64).reshape(-1, 2)
    keys = np.minimum(removed[:, 0], removed[:, 1]) * g.num_nodes + np.maximum(removed[:, 0], removed[:, 1])
    keep = ~np.isin(g.edge_keys(), keys)
    triples = np.column_stack([g.edges[keep], g.weights[keep]])
    return build_graph(
        [(int(u), int(v), w) for u, v, w in triples], num_nodes=g.num_nodes
    )


def read_edge_list(path, merge="sum", num_nodes=None):
    """Parse a ``src dst [weight]`` edge-list file into a :class:`Graph`.

    ``#`` lines are comments; a ``%N <count>`` header fixes the node count,
    otherwise it is the largest id plus one.
    """
    edges, lines, header_n = read_pairs(path)
    n = num_nodes if num_nodes is not None else header_n
    return build_graph(edges, num_nodes=n, merge=merge, line_numbers=lines, source=str(path))


def read_pairs(path):
    """Raw ``(edges, line_numbers, header_node_count)`` from an edge-list file."""
    path = Path(path)
    edges, lines = [], []
    header_n = None
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read file: {exc.strerror}", str(path)) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if parts[0] == "%N":
            if len(parts) != 2:
                raise DataError("header must read '%N <count>'", str(path), lineno)
            try:
                header_n = int(parts[1])
            except ValueError:
                raise DataError(f"bad node count {parts[1]!r}", str(path), lineno) from None
            continue
        if len(parts) not in (2, 3):
            raise DataError(f"expected 'src dst [weight]', got {s!r}", str(path), lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
            e = (u, v) if len(parts) == 2 else (u, v, float(parts[2]))
        except ValueError:
            raise DataError(f"cannot parse {s!r}", str(path), lineno) from None
        edges.append(e)
        lines.append(lineno)
    return edges, lines, header_n


def read_pair_array(path, num_nodes=None):
    """Node pairs of an edge-list file as an ``(E, 2)`` array, weights ignored."""
    edges, lines, _ = read_pairs(path)
    for e, lineno in zip(edges, lines):
        if min(e[0], e[1]) < 0 or (num_nodes is not None and max(e[0], e[1]) >= num_nodes):
            raise DataError(f"node index out of range in pair ({e[0]}, {e[1]})", str(path), lineno)
    return np.asarray([e[:2] for e in edges], dtype=np.int64).reshape(-1, 2)


def format_edge_list(pairs, num_nodes=None, weights=None):
    out = []
    if num_nodes is not None:
        out.append(f"%N {num_nodes}")
    for k, (u, v) in enumerate(np.asarray(pairs, dtype=np.int64).reshape(-1, 2)):
        if weights is None:
            out.append(f"{u} {v}")
        else:
            out.append(f"{u} {v} {weights[k]!r}")
    return "\n".join(out) + "\n"
