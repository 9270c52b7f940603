"""Bipartite adjacency in canonical CSR form and the propagation kernel.

The kernel walks each output row over its stored entries in ascending column
order, so every row's sum has a fixed order. Threads only ever split the
row range, which keeps the result bit-identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NotSquare


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if rp.shape != (self.rows + 1,) or rp[0] != 0 or rp[-1] != len(ci) or len(ci) != len(v):
            raise ValueError("inconsistent CSR arrays")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.cols):
            raise ValueError("column index out of range")
        row_of = np.repeat(np.arange(self.rows), np.diff(rp))
        same_row = row_of[1:] == row_of[:-1]
        if np.any(np.diff(ci)[same_row] <= 0):
            raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite values")

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        m = sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape)
        m.has_sorted_indices = True
        return m

    @classmethod
    def from_coo(cls, rows: int, cols: int, r, c, v) -> "SparseMatrix":
        """Canonicalize triplets (duplicates summed, columns sorted)."""
        m = sp.coo_matrix((np.asarray(v, dtype=np.float64), (r, c)), shape=(rows, cols)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(rows, cols, m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(np.float64))

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], r, c, a[r, c])

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrix":
        t = self._csr.T.tocsr()
        t.sort_indices()
        return SparseMatrix(self.cols, self.rows, t.indptr.astype(np.int64),
                            t.indices.astype(np.int64), t.data.astype(np.float64))

    def degrees(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def dump_triplets(self, path) -> None:
        """Debug dump, one ``row col value`` line per stored entry."""
        rows = np.repeat(np.arange(self.rows), np.diff(self.row_ptr))
        with open(path, "w", encoding="ascii") as fh:
            for r, c, v in zip(rows.tolist(), self.col_idx.tolist(), self.values.tolist()):
                fh.write(f"{r} {c} {v!r}\n")


def build_adjacency(ds) -> SparseMatrix:
    """(p+q) x (p+q) bipartite adjacency of the train interactions."""
    p, q = ds.num_users, ds.num_items
    u = ds.train[:, 0]
    i = ds.train[:, 1] + p
    r = np.concatenate([u, i])
    c = np.concatenate([i, u])
    return SparseMatrix.from_coo(p + q, p + q, r, c, np.ones(len(r)))


def normalize_symmetric(adj: SparseMatrix) -> SparseMatrix:
    """D^{-1/2} A D^{-1/2}; zero-degree nodes get D^{-1/2} = 0."""
    if adj.rows != adj.cols:
        raise NotSquare(f"adjacency is {adj.rows}x{adj.cols}")
    deg = adj.degrees()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    rows = np.repeat(np.arange(adj.rows), np.diff(adj.row_ptr))
    vals = inv_sqrt[rows] * adj.values * inv_sqrt[adj.col_idx]
    keep = vals != 0.0
    if keep.all():
        return SparseMatrix(adj.rows, adj.cols, adj.row_ptr.copy(), adj.col_idx.copy(), vals)
    return SparseMatrix.from_coo(adj.rows, adj.cols, rows[keep], adj.col_idx[keep], vals[keep])


@numba.njit(nogil=True, cache=True)
def _csr_rows(row_ptr, col_idx, values, dense, out, lo, hi):
    d = dense.shape[1]
    for r in range(lo, hi):
        for c in range(d):
            out[r, c] = 0.0
        for k in range(row_ptr[r], row_ptr[r + 1]):
            a = values[k]
            src = col_idx[k]
            for c in range(d):
                out[r, c] += a * dense[src, c]


def spmm(adj: SparseMatrix, dense: np.ndarray, threads: int = 1) -> np.ndarray:
    """Sparse (n x m) times dense (m x d)."""
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != adj.cols:
        raise DimensionMismatch(f"cannot multiply {adj.shape} by {dense.shape}")
    out = np.empty((adj.rows, dense.shape[1]), dtype=np.float64)
    args = (adj.row_ptr, adj.col_idx, adj.values, dense, out)
    if threads <= 1 or adj.rows < 2 * threads:
        _csr_rows(*args, 0, adj.rows)
        return out
    bounds = np.linspace(0, adj.rows, threads + 1).astype(np.int64)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda k: _csr_rows(*args, bounds[k], bounds[k + 1]), range(threads)))
    return out


@numba.njit(nogil=True, cache=True)
def scatter_add(target, rows, values):
    """target[rows[k]] += values[k] in index order (deterministic np.add.at)."""
    d = target.shape[1]
    for k in range(len(rows)):
        r = rows[k]
        for c in range(d):
            target[r, c] += values[k, c]
