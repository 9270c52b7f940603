"""BPR + adaptive de-correlation training with hand-derived gradients and Adam.

Every step: propagate E^(0) through L layers, pool, take the BPR gradient
w.r.t. the pooled rows, add alpha times the per-layer penalty gradients, run
the adjoint of the propagation back to E^(0), add the L2 gradient and apply
Adam. The normalized adjacency is symmetric so the adjoint of one
propagation step is the same sparse product.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import afd
from .errors import ConfigError, Diverged, IndexOutOfRange, NoNegativeAvailable, NonFiniteGradient, ShapeMismatch
from .graph import SparseMatrix, scatter_add, spmm
from .metrics import evaluate
from .model import DEFAULT_POOLING, VARIANTS, EmbeddingTable, init_embeddings, pool, propagate, write_checkpoint
from .rng import substream

log = logging.getLogger(__name__)

ALPHA_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1)
L2_GRID = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class TrainConfig:
    d: int = 128
    L: int = 3
    variant: str = "lightgcn"
    alpha: float = 1e-3
    l2_reg: float = 1e-6
    lr: float = 1e-3
    batch_size: int = 4096
    max_epochs: int = 1000
    patience: int = 10
    eval_k: int = 10
    seed: int = 2020
    corr_sample_size: int = 0
    adaptive: bool = True
    bpr_reduction: str = "mean"
    threads: int = 1
    log_timing: bool = False

    def validate(self) -> "TrainConfig":
        problems = []
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("alpha must lie in [0, 1]")
        if self.l2_reg < 0:
            problems.append("l2_reg must be >= 0")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.d < 1 or self.L < 0 or self.max_epochs < 1 or self.eval_k < 1:
            problems.append("d, max_epochs, eval_k must be >= 1 and L >= 0")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}")
        if self.bpr_reduction not in ("mean", "sum"):
            problems.append("bpr_reduction must be 'mean' or 'sum'")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainState:
    table: EmbeddingTable
    adam_m: np.ndarray
    adam_v: np.ndarray
    t: int
    rng: np.random.Generator
    best_metric: float = -math.inf
    epochs_since_best: int = 0
    best_epoch: int = 0

    @classmethod
    def fresh(cls, table: EmbeddingTable, seed: int) -> "TrainState":
        return cls(table, np.zeros_like(table.E0), np.zeros_like(table.E0), 0, substream(seed, "sampling"))


# -- sampling -----------------------------------------------------------------

class NegativeSampler:
    """Uniform (u, i_pos) from train pairs, uniform i_neg rejected against train."""

    def __init__(self, ds):
        self.q = ds.num_items
        self.train = ds.train
        self.codes = np.sort(ds.train[:, 0] * ds.num_items + ds.train[:, 1])
        counts = np.bincount(ds.train[:, 0], minlength=ds.num_users)
        self.full_users = set(np.flatnonzero(counts >= ds.num_items).tolist())

    def _seen(self, users, items):
        codes = users * self.q + items
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, len(self.codes) - 1)
        return self.codes[pos] == codes

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, len(self.train), size=batch_size)
        users = self.train[idx, 0]
        bad = self.full_users.intersection(users.tolist())
        if bad:
            raise NoNegativeAvailable(min(bad))
        neg = rng.integers(0, self.q, size=batch_size)
        redo = np.flatnonzero(self._seen(users, neg))
        while len(redo):
            neg[redo] = rng.integers(0, self.q, size=len(redo))
            redo = redo[self._seen(users[redo], neg[redo])]
        return np.stack([users, self.train[idx, 1], neg], axis=1)


def sample_batch(ds, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """(batch_size, 3) array of (user, positive item, negative item)."""
    return NegativeSampler(ds).sample(batch_size, rng)


# -- loss terms ---------------------------------------------------------------

def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss_and_grad(pooled, batch, reduction: str = "mean"):
    """BPR loss over (u, i, j) triples and its gradient w.r.t. the pooled rows.

    Item indices in ``batch`` are item-local (0..q-1).
    """
    E = pooled.E
    p = pooled.p
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    u, i, j = batch[:, 0], batch[:, 1] + p, batch[:, 2] + p
    if len(batch) and (u.min() < 0 or u.max() >= p or min(i.min(), j.min()) < p or max(i.max(), j.max()) >= len(E)):
        raise IndexOutOfRange("batch index outside the pooled table")
    eu, ei, ej = E[u], E[i], E[j]
    x = np.einsum("bd,bd->b", eu, ei - ej)
    scale = 1.0 / max(len(batch), 1) if reduction == "mean" else 1.0
    loss = -scale * float(np.sum(log_sigmoid(x)))
    # d/dx of -log sigmoid(x) = -sigmoid(-x)
    c = -scale * np.exp(log_sigmoid(-x))
    grad = np.zeros_like(E)
    scatter_add(grad, u, c[:, None] * (ei - ej))
    scatter_add(grad, i, c[:, None] * eu)
    scatter_add(grad, j, -c[:, None] * eu)
    return loss, grad


def backward_through_stack(grad_pooled, grad_afd_layers, adj: SparseMatrix, L: int, variant: str,
                           pooling: str, threads: int = 1) -> np.ndarray:
    """Adjoint of pooling and propagation: gradient w.r.t. E^(0).

    ``grad_afd_layers`` holds gradients for layers 1..L (or is empty/None).
    """
    n = grad_pooled.shape[0]
    if pooling == "mean":
        per_layer = [grad_pooled / (L + 1)] * (L + 1)
    elif pooling == "concat":
        if grad_pooled.shape[1] % (L + 1):
            raise ShapeMismatch(f"concat gradient width {grad_pooled.shape[1]} not divisible by {L + 1}")
        per_layer = np.split(grad_pooled, L + 1, axis=1)
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    per_layer = [g.copy() for g in per_layer]
    if grad_afd_layers:
        if len(grad_afd_layers) != L:
            raise ShapeMismatch(f"{len(grad_afd_layers)} penalty gradients for {L} layers")
        for l, g in enumerate(grad_afd_layers, start=1):
            if g.shape != per_layer[l].shape:
                raise ShapeMismatch(f"layer {l} gradient {g.shape} vs {per_layer[l].shape}")
            per_layer[l] += g
    acc = per_layer[L]
    for l in range(L - 1, -1, -1):
        back = spmm(adj, acc, threads)
        if variant == "gccf":
            back += acc
        acc = back + per_layer[l]
    if acc.shape[0] != n:
        raise ShapeMismatch("gradient rows changed during backward pass")
    return acc


def objective_and_grad(table: EmbeddingTable, adj: SparseMatrix, batch, cfg: TrainConfig,
                       sample_indices=None, coefficients=None):
    """Total loss terms and dL/dE^(0) for one batch.

    ``coefficients`` freezes the layer weights (the gradient always treats them
    as constants, so this is what a finite-difference check must do too).
    """
    stack = propagate(adj, table, cfg.L, cfg.variant, cfg.threads)
    pooling = DEFAULT_POOLING[cfg.variant]
    pooled = pool(stack, pooling)
    bpr, g_pooled = bpr_loss_and_grad(pooled, batch, cfg.bpr_reduction)
    report = None
    g_afd = None
    afd_value = 0.0
    if cfg.L >= 1:
        if cfg.alpha > 0:
            report, g_afd = afd.afd_loss_and_grad(stack, table.p, sample_indices, cfg.adaptive, coefficients)
            for g in g_afd:
                g *= cfg.alpha
        else:
            report = afd.afd_loss(stack, table.p, sample_indices, cfg.adaptive, coefficients)
        afd_value = report.loss_value
    grad = backward_through_stack(g_pooled, g_afd, adj, cfg.L, cfg.variant, pooling, cfg.threads)
    l2 = 0.5 * cfg.l2_reg * float(np.sum(table.E0 * table.E0))
    if cfg.l2_reg:
        grad += cfg.l2_reg * table.E0
    terms = {
        "bpr_loss": bpr,
        "afd_loss": afd_value,
        "l2_loss": l2,
        "total_loss": bpr + cfg.alpha * afd_value + l2,
    }
    return terms, grad, report


def adam_update(state: TrainState, grad: np.ndarray, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """Bias-corrected Adam step applied to every row of E^(0)."""
    if grad.shape != state.table.E0.shape:
        raise ShapeMismatch(f"gradient {grad.shape} vs parameters {state.table.E0.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    state.t += 1
    state.adam_m *= beta1
    state.adam_m += (1 - beta1) * grad
    state.adam_v *= beta2
    state.adam_v += (1 - beta2) * grad * grad
    m_hat = state.adam_m / (1 - beta1 ** state.t)
    v_hat = state.adam_v / (1 - beta2 ** state.t)
    state.table.E0 -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# -- loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    history: list
    best_epoch: int
    final_report: Optional[afd.CorrelationReport]


def _epoch_record(epoch, sums, steps, report, metrics, seconds):
    rec = {"epoch": epoch}
    for key in ("bpr_loss", "afd_loss", "l2_loss", "total_loss"):
        rec[key] = sums[key] / steps
    if report is not None:
        rec.update({k: v for k, v in report.to_log().items() if k != "afd_loss"})
    else:
        rec.update({"pbar_user": [], "pbar_item": [], "lambda_user": [], "lambda_item": []})
    rec.update({
        "valid_recall": metrics.recall,
        "valid_ndcg": metrics.ndcg,
        "valid_map": metrics.map,
        "seconds": seconds,
    })
    return rec


def train(ds, adj: SparseMatrix, cfg: TrainConfig, out_dir=None, table: EmbeddingTable | None = None) -> TrainResult:
    """Train until validation NDCG@eval_k stops improving for ``patience`` epochs.

    Returns the state restored to the best validation epoch. When ``out_dir``
    is given, ``history.jsonl`` is appended per epoch and ``checkpoint.afde``
    is rewritten at every new best.
    """
    cfg.validate()
    table = table.copy() if table is not None else init_embeddings(ds.num_users, ds.num_items, cfg.d, cfg.seed)
    state = TrainState.fresh(table, cfg.seed)
    sampler = NegativeSampler(ds)
    corr_rng = substream(cfg.seed, "corr")
    steps = max(1, math.ceil(len(ds.train) / cfg.batch_size))
    history = []
    best_E0 = table.E0.copy()
    hist_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        hist_fh = open(os.path.join(out_dir, "history.jsonl"), "w", encoding="ascii", newline="\n")
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            sums = dict.fromkeys(("bpr_loss", "afd_loss", "l2_loss", "total_loss"), 0.0)
            for _ in range(steps):
                batch = sampler.sample(cfg.batch_size, state.rng)
                sample = afd.sample_rows(corr_rng, ds.num_users, ds.num_items, cfg.corr_sample_size)
                terms, grad, _ = objective_and_grad(state.table, adj, batch, cfg, sample)
                if not math.isfinite(terms["total_loss"]):
                    raise Diverged(f"non-finite loss at epoch {epoch}")
                for k in sums:
                    sums[k] += terms[k]
                adam_update(state, grad, cfg.lr)

            stack = propagate(adj, state.table, cfg.L, cfg.variant, cfg.threads)
            report = afd.afd_loss(stack, ds.num_users, adaptive=cfg.adaptive) if cfg.L >= 1 else None
            metrics = evaluate(pool(stack), ds, "valid", cfg.eval_k)
            seconds = time.perf_counter() - t0 if cfg.log_timing else None
            rec = _epoch_record(epoch, sums, steps, report, metrics, seconds)
            history.append(rec)
            if hist_fh is not None:
                hist_fh.write(json.dumps(rec) + "\n")
                hist_fh.flush()
            log.info("epoch %d total=%.5f ndcg@%d=%.5f", epoch, rec["total_loss"], cfg.eval_k, metrics.ndcg)

            if metrics.ndcg > state.best_metric:
                state.best_metric = metrics.ndcg
                state.best_epoch = epoch
                state.epochs_since_best = 0
                best_E0 = state.table.E0.copy()
                if out_dir is not None:
                    write_checkpoint(os.path.join(out_dir, "checkpoint.afde"), state.table, cfg.L, cfg.variant)
            else:
                state.epochs_since_best += 1
                if state.epochs_since_best >= cfg.patience:
                    break
    finally:
        if hist_fh is not None:
            hist_fh.close()

    state.table.E0 = best_E0
    final = None
    if cfg.L >= 1:
        final = afd.afd_loss(propagate(adj, state.table, cfg.L, cfg.variant), ds.num_users, adaptive=cfg.adaptive)
    return TrainResult(state, history, state.best_epoch, final)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
