"""Full-ranking top-K evaluation: Recall, NDCG and MAP with binary gains."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyRelevant, KTooLarge, ShapeMismatch
from .model import PooledEmbedding, score_users


@dataclass
class MetricsReport:
    k: int
    recall: float
    ndcg: float
    map: float
    num_users_evaluated: int
    per_layer_corr: Optional[list] = field(default=None)
    per_layer_smv: Optional[list] = field(default=None)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        return "k,recall,ndcg,map,users\n" + (
            f"{self.k},{self.recall!r},{self.ndcg!r},{self.map!r},{self.num_users_evaluated}\n"
        )


def rank_topk(scores, mask, k: int) -> np.ndarray:
    """Top-k unmasked items ordered by (score desc, index asc)."""
    s = np.array(scores, dtype=np.float64)
    mask = np.fromiter(mask, dtype=np.int64) if not isinstance(mask, np.ndarray) else mask
    n_masked = len(np.unique(mask))
    if k > len(s) - n_masked:
        raise KTooLarge(f"k={k} but only {len(s) - n_masked} unmasked items")
    s[mask] = -np.inf
    return np.argsort(-s, kind="stable")[:k]


def _check(relevant):
    if len(relevant) == 0:
        raise EmptyRelevant("relevant set is empty")


def recall_at_k(topk, relevant) -> float:
    _check(relevant)
    rel = set(relevant)
    hits = sum(1 for i in topk if i in rel)
    return hits / len(rel)


def ndcg_at_k(topk, relevant) -> float:
    _check(relevant)
    rel = set(relevant)
    dcg = 0.0
    for r, i in enumerate(topk, start=1):
        if i in rel:
            dcg += 1.0 / math.log2(r + 1)
    idcg = 0.0
    for r in range(1, min(len(topk), len(rel)) + 1):
        idcg += 1.0 / math.log2(r + 1)
    return dcg / idcg


def map_at_k(topk, relevant) -> float:
    _check(relevant)
    rel = set(relevant)
    hits = 0
    total = 0.0
    for r, i in enumerate(topk, start=1):
        if i in rel:
            hits += 1
            total += hits / r
    return total / min(len(topk), len(rel))


def topk_for_users(pooled: PooledEmbedding, users, masks, k: int, chunk: int = 512) -> np.ndarray:
    """Row-wise :func:`rank_topk` for many users, scored in blocks of ``chunk``."""
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((len(users), k), dtype=np.int64)
    for lo in range(0, len(users), chunk):
        block = users[lo:lo + chunk]
        S = score_users(pooled, block)
        for r, u in enumerate(block):
            m = masks[u]
            if k > S.shape[1] - len(m):
                raise KTooLarge(f"user {u}: k={k} exceeds unmasked items")
            S[r, m] = -np.inf
        out[lo:lo + len(block)] = _topk_rows(S, k)
    return out


def _topk_rows(S: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k by (score desc, index asc) without a full sort."""
    if k >= S.shape[1]:
        return np.argsort(-S, axis=1, kind="stable")[:, :k]
    kth = -np.partition(-S, k - 1, axis=1)[:, k - 1]
    out = np.empty((S.shape[0], k), dtype=np.int64)
    for r in range(S.shape[0]):
        cand = np.flatnonzero(S[r] >= kth[r])
        order = np.lexsort((cand, -S[r, cand]))
        out[r] = cand[order[:k]]
    return out


def evaluate(pooled: PooledEmbedding, ds, split: str = "test", k: int = 10) -> MetricsReport:
    """All-ranking evaluation, masking each user's train items."""
    if pooled.p != ds.num_users or pooled.E.shape[0] != ds.num_users + ds.num_items:
        raise ShapeMismatch(f"pooled rows {pooled.E.shape[0]} vs p+q={ds.num_users + ds.num_items}")
    targets = ds.items_by_user(split)
    users = [u for u in range(ds.num_users) if len(targets[u])]
    if not users:
        return MetricsReport(k, 0.0, 0.0, 0.0, 0)
    top = topk_for_users(pooled, users, ds.train_items_by_user, k)
    rec, nd, ap = [], [], []
    for row, u in zip(top.tolist(), users):
        rel = targets[u].tolist()
        rec.append(recall_at_k(row, rel))
        nd.append(ndcg_at_k(row, rel))
        ap.append(map_at_k(row, rel))
    return MetricsReport(k, math.fsum(rec) / len(users), math.fsum(nd) / len(users),
                         math.fsum(ap) / len(users), len(users))
