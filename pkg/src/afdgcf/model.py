"""Embedding table, linear propagation (LightGCN / residual GCCF), pooling and scoring."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch, IndexOutOfRange, ShapeMismatch, UnsupportedCombination
from .graph import SparseMatrix, spmm
from .rng import substream

VARIANTS = ("lightgcn", "gccf")
DEFAULT_POOLING = {"lightgcn": "mean", "gccf": "concat"}

CHECKPOINT_MAGIC = b"AFDE"
CHECKPOINT_VERSION = 1


@dataclass
class EmbeddingTable:
    E0: np.ndarray  # (p+q, d), users first
    p: int
    q: int

    @property
    def d(self) -> int:
        return self.E0.shape[1]

    @property
    def users(self) -> np.ndarray:
        return self.E0[: self.p]

    @property
    def items(self) -> np.ndarray:
        return self.E0[self.p :]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.E0.copy(), self.p, self.q)


@dataclass
class LayerStack:
    layers: list
    variant: str
    p: int

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1


@dataclass
class PooledEmbedding:
    E: np.ndarray
    pooling: str
    p: int

    @property
    def users(self) -> np.ndarray:
        return self.E[: self.p]

    @property
    def items(self) -> np.ndarray:
        return self.E[self.p :]


def xavier_bound(d: int) -> float:
    # fan_in = fan_out = d
    return float(np.sqrt(6.0 / (d + d)))


def init_embeddings(p: int, q: int, d: int, seed: int) -> EmbeddingTable:
    """Xavier-uniform table drawn from the run's ``init`` stream."""
    if min(p, q, d) < 1:
        raise ValueError("p, q and d must be >= 1")
    bound = xavier_bound(d)
    rng = substream(seed, "init")
    return EmbeddingTable(rng.uniform(-bound, bound, size=(p + q, d)), p, q)


def propagate(adj: SparseMatrix, table: EmbeddingTable, L: int, variant: str = "lightgcn",
              threads: int = 1) -> LayerStack:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if L < 0:
        raise ValueError("L must be >= 0")
    if adj.rows != table.E0.shape[0] or adj.cols != table.E0.shape[0]:
        raise DimensionMismatch(f"adjacency {adj.shape} vs table {table.E0.shape}")
    layers = [table.E0]
    e = table.E0
    for _ in range(L):
        nxt = spmm(adj, e, threads)
        if variant == "gccf":
            nxt += e
        layers.append(nxt)
        e = nxt
    return LayerStack(layers, variant, table.p)


def pool(stack: LayerStack, pooling: str | None = None, strict: bool = False) -> PooledEmbedding:
    default = DEFAULT_POOLING[stack.variant]
    pooling = pooling or default
    if strict and pooling != default:
        raise UnsupportedCombination(f"{stack.variant} pools with {default}, not {pooling}")
    if pooling == "mean":
        E = np.mean(np.stack(stack.layers), axis=0)
    elif pooling == "concat":
        E = np.concatenate(stack.layers, axis=1)
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    return PooledEmbedding(E, pooling, stack.p)


def score_all(pooled: PooledEmbedding, user_index: int) -> np.ndarray:
    """Inner-product scores of one user against every item."""
    if not 0 <= user_index < pooled.p:
        raise IndexOutOfRange(f"user {user_index} not in [0, {pooled.p})")
    return pooled.items @ pooled.E[user_index]


def score_users(pooled: PooledEmbedding, users) -> np.ndarray:
    """Score a block of users at once (len(users) x q)."""
    return pooled.E[np.asarray(users)] @ pooled.items.T


def forward(adj: SparseMatrix, table: EmbeddingTable, L: int, variant: str) -> PooledEmbedding:
    return pool(propagate(adj, table, L, variant))


# -- checkpoint ---------------------------------------------------------------

def write_checkpoint(path, table: EmbeddingTable, L: int, variant: str) -> None:
    header = CHECKPOINT_MAGIC + struct.pack(
        "<6I", CHECKPOINT_VERSION, table.p, table.q, table.d, L, VARIANTS.index(variant)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(table.E0, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Returns (table, L, variant)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC or len(blob) < 28:
        raise DataError(f"{path} is not a checkpoint")
    version, p, q, d, L, code = struct.unpack("<6I", blob[4:28])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    body = blob[28:]
    if len(body) != (p + q) * d * 8 or code >= len(VARIANTS):
        raise DataError(f"corrupt checkpoint {path}")
    E0 = np.frombuffer(body, dtype="<f8").reshape(p + q, d).astype(np.float64)
    return EmbeddingTable(E0, p, q), L, VARIANTS[code]


def check_compatible(table: EmbeddingTable, ds, d: int | None = None) -> None:
    if table.p != ds.num_users or table.q != ds.num_items or (d is not None and table.d != d):
        raise ShapeMismatch(
            f"checkpoint has p={table.p} q={table.q} d={table.d}; "
            f"dataset has p={ds.num_users} q={ds.num_items}"
            + (f", expected d={d}" if d is not None else "")
        )
