"""Adaptive feature de-correlation penalty and its exact gradient.

For a block ``E`` (n x d) let ``X`` be ``E`` with column means removed and
``Z = X diag(1/||x_j||)``. The column correlation matrix is ``P = Z^T Z`` and
the penalty kernel is the mean squared off-diagonal entry of ``P``. The
gradient is pushed back through the three steps (Gram, column normalization,
centering) in closed form; see :func:`pbar_and_grad`.

Coefficients per layer are inversely proportional to each layer's kernel
value and are held constant when differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeMismatch, TooFewRows

EPS = 1e-12


def _normalized_columns(E: np.ndarray):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise TooFewRows(f"need at least 2 rows, got shape {E.shape}")
    X = E - E.mean(axis=0)
    var = np.einsum("ij,ij->j", X, X)
    inv_s = np.zeros_like(var)
    ok = var > EPS
    inv_s[ok] = 1.0 / np.sqrt(var[ok])
    return X * inv_s, inv_s


def column_correlation(E: np.ndarray) -> np.ndarray:
    """Pearson correlation between the columns of ``E`` (d x d).

    Zero-variance columns correlate 0 with everything else, 1 with themselves.
    """
    Z, _ = _normalized_columns(E)
    P = Z.T @ Z
    P = 0.5 * (P + P.T)
    np.fill_diagonal(P, 1.0)
    return np.clip(P, -1.0, 1.0)


def mean_feature_correlation(E: np.ndarray) -> float:
    """Mean of squared off-diagonal column correlations, in [0, 1]."""
    P = column_correlation(E)
    d = P.shape[0]
    if d < 2:
        return 0.0
    off = P - np.eye(d)
    return float(np.sum(off * off) / (d * (d - 1)))


def decorrelation_norm(E: np.ndarray) -> float:
    """Matrix form ``||P - I||_F / sqrt(2)``.

    Relates to the kernel by ``mean_feature_correlation = 2 * norm**2 / (d(d-1))``.
    """
    P = column_correlation(E)
    return float(np.linalg.norm(P - np.eye(P.shape[0])) / np.sqrt(2.0))


def pbar_and_grad(E: np.ndarray):
    """Kernel value and its gradient with respect to ``E``."""
    Z, inv_s = _normalized_columns(E)
    n, d = Z.shape
    if d < 2:
        return 0.0, np.zeros_like(Z)
    P = Z.T @ Z
    np.fill_diagonal(P, 0.0)
    scale = 1.0 / (d * (d - 1))
    value = float(np.sum(P * P) * scale)
    # d/dZ of sum_ij M_ij (Z^T Z)_ij^2 with symmetric M
    G = 4.0 * scale * (Z @ P)
    # column normalization: z = x / ||x||
    GX = (G - Z * np.einsum("ij,ij->j", Z, G)) * inv_s
    # centering
    return value, GX - GX.mean(axis=0)


def adaptive_coefficients(pbar) -> np.ndarray:
    """Per-layer weights proportional to 1/pbar, normalized to sum to one."""
    pbar = np.asarray(pbar, dtype=np.float64)
    if pbar.ndim != 1 or len(pbar) < 1:
        raise ValueError("need at least one layer")
    inv = 1.0 / (pbar + EPS)
    return inv / inv.sum()


def fixed_coefficients(num_layers: int) -> np.ndarray:
    return np.full(num_layers, 1.0 / num_layers)


@dataclass
class CorrelationReport:
    per_layer_user: list
    per_layer_item: list
    lambda_user: list
    lambda_item: list
    loss_value: float
    sample_user: Optional[np.ndarray] = field(default=None, repr=False)
    sample_item: Optional[np.ndarray] = field(default=None, repr=False)

    def to_log(self) -> dict:
        return {
            "pbar_user": list(self.per_layer_user),
            "pbar_item": list(self.per_layer_item),
            "lambda_user": list(self.lambda_user),
            "lambda_item": list(self.lambda_item),
            "afd_loss": self.loss_value,
        }


def _blocks(layer: np.ndarray, p: int, sample_user, sample_item):
    user, item = layer[:p], layer[p:]
    if sample_user is not None:
        user = user[sample_user]
    if sample_item is not None:
        item = item[sample_item]
    return user, item


def sample_rows(rng, p: int, q: int, size: int):
    """Row subsets (without replacement) for estimating correlations; ``size<=0`` means all."""
    if size <= 0:
        return None, None
    su = np.sort(rng.choice(p, size=size, replace=False)) if size < p else None
    si = np.sort(rng.choice(q, size=size, replace=False)) if size < q else None
    return su, si


def afd_loss(stack, p: int | None = None, sample_indices=None, adaptive: bool = True,
             coefficients=None) -> CorrelationReport:
    """Layer-wise, side-wise penalty over layers 1..L (layer 0 is never penalized).

    ``sample_indices`` is an optional ``(user_rows, item_rows)`` pair of index
    arrays into the user and item blocks. ``coefficients`` freezes the
    ``(lambda_user, lambda_item)`` weights instead of deriving them.
    """
    p = stack.p if p is None else p
    L = len(stack.layers) - 1
    if L < 1:
        raise ValueError("stack needs at least one propagated layer")
    su, si = sample_indices if sample_indices is not None else (None, None)
    pu, pi = [], []
    for layer in stack.layers[1:]:
        user, item = _blocks(layer, p, su, si)
        pu.append(mean_feature_correlation(user))
        pi.append(mean_feature_correlation(item))
    if coefficients is not None:
        lu, li = (np.asarray(c, dtype=np.float64) for c in coefficients)
    elif adaptive:
        lu, li = adaptive_coefficients(pu), adaptive_coefficients(pi)
    else:
        lu = li = fixed_coefficients(L)
    loss = float(np.dot(lu, pu) + np.dot(li, pi))
    return CorrelationReport(pu, pi, lu.tolist(), li.tolist(), loss, su, si)


def _scatter_block_grads(layer, p, su, si, gu, gi):
    g = np.zeros_like(layer)
    if su is None:
        g[:p] = gu
    else:
        g[su] = gu
    if si is None:
        g[p:] = gi
    else:
        g[p + si] = gi
    return g


def afd_loss_and_grad(stack, p: int | None = None, sample_indices=None, adaptive: bool = True,
                      coefficients=None):
    """:func:`afd_loss` and :func:`afd_backward` sharing one pass over the blocks."""
    p = stack.p if p is None else p
    L = len(stack.layers) - 1
    if L < 1:
        raise ValueError("stack needs at least one propagated layer")
    su, si = sample_indices if sample_indices is not None else (None, None)
    pu, pi, raw = [], [], []
    for layer in stack.layers[1:]:
        user, item = _blocks(layer, p, su, si)
        vu, gu = pbar_and_grad(user)
        vi, gi = pbar_and_grad(item)
        pu.append(vu)
        pi.append(vi)
        raw.append((gu, gi))
    if coefficients is not None:
        lu, li = (np.asarray(c, dtype=np.float64) for c in coefficients)
    elif adaptive:
        lu, li = adaptive_coefficients(pu), adaptive_coefficients(pi)
    else:
        lu = li = fixed_coefficients(L)
    loss = float(np.dot(lu, pu) + np.dot(li, pi))
    report = CorrelationReport(pu, pi, lu.tolist(), li.tolist(), loss, su, si)
    grads = [
        _scatter_block_grads(layer, p, su, si, gu * lu[l], gi * li[l])
        for l, (layer, (gu, gi)) in enumerate(zip(stack.layers[1:], raw))
    ]
    return report, grads


def afd_backward(stack, p: int | None, report: CorrelationReport) -> list:
    """Gradients of the penalty with respect to E^(1)..E^(L) (coefficients constant).

    Rows outside the sampled subsets get zero gradient.
    """
    p = stack.p if p is None else p
    L = len(stack.layers) - 1
    if len(report.lambda_user) != L or len(report.lambda_item) != L:
        raise ShapeMismatch(f"report covers {len(report.lambda_user)} layers, stack has {L}")
    su, si = report.sample_user, report.sample_item
    grads = []
    for l, layer in enumerate(stack.layers[1:]):
        user, item = _blocks(layer, p, su, si)
        _, gu = pbar_and_grad(user)
        _, gi = pbar_and_grad(item)
        grads.append(_scatter_block_grads(layer, p, su, si,
                                          gu * report.lambda_user[l], gi * report.lambda_item[l]))
    return grads
