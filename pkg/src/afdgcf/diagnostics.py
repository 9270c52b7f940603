"""Representation diagnostics: feature correlation (Corr), smoothness (SMV),
double standardization and the row/column correlation norm identity."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist

from .afd import column_correlation
from .errors import DidNotConverge, NotStandardized, TooFewRows, ZeroNormRow


def corr_metric(E: np.ndarray) -> float:
    """Mean absolute Pearson correlation over distinct column pairs."""
    P = column_correlation(E)
    d = P.shape[0]
    if d < 2:
        raise TooFewRows("need at least 2 columns")
    return float((np.abs(P).sum() - d) / (d * (d - 1)))


def smv_metric(E: np.ndarray, sample: int = 0, rng=None) -> float:
    """Mean over unordered row pairs of 0.5 * || x/|x| - y/|y| ||.

    With ``sample > 0`` only a random subset of that many rows is compared.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.shape[0] < 2:
        raise TooFewRows(f"need at least 2 rows, got {E.shape[0]}")
    rows = np.arange(E.shape[0])
    if 0 < sample < E.shape[0]:
        rng = rng if rng is not None else np.random.default_rng(0)
        rows = np.sort(rng.choice(E.shape[0], size=sample, replace=False))
        if len(rows) < 2:
            raise TooFewRows("sample must be >= 2")
    X = E[rows]
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise ZeroNormRow(int(rows[zero[0]]))
    U = X / norms[:, None]
    return float(0.5 * pdist(U, "euclidean").mean())


def standardization_residual(M: np.ndarray) -> float:
    """Max deviation of any row/column mean from 0 and population variance from 1."""
    M = np.asarray(M, dtype=np.float64)
    return float(max(
        np.abs(M.mean(axis=0)).max(), np.abs(M.mean(axis=1)).max(),
        np.abs(M.var(axis=0) - 1).max(), np.abs(M.var(axis=1) - 1).max(),
    ))


def double_standardize(M: np.ndarray, tol: float = 1e-10, max_iter: int = 500):
    """Alternate row and column standardization until both hold within ``tol``.

    Returns ``(matrix, residual)``; raises DidNotConverge (carrying both) otherwise.
    """
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or min(M.shape) < 2:
        raise TooFewRows(f"need at least 2x2, got {M.shape}")
    res = standardization_residual(M)
    for _ in range(max_iter):
        if res < tol:
            return M, res
        for axis in (1, 0):
            M = M - M.mean(axis=axis, keepdims=True)
            sd = M.std(axis=axis, keepdims=True)
            if np.any(sd == 0):
                raise ValueError("constant row or column; cannot standardize")
            M = M / sd
        res = standardization_residual(M)
    if res < tol:
        return M, res
    raise DidNotConverge(res, M)


def _pearson_rows(M):
    return column_correlation(M.T)


def norm_identity_residual(M: np.ndarray, form: str = "pearson", check: bool = True,
                      check_tol: float = 1e-8) -> float:
    """``| ||P_R||_F / m - ||P_C||_F / n |`` for an m x n matrix.

    ``form="pearson"`` builds both matrices from Pearson correlations (rows and
    columns respectively); on a doubly standardized matrix these coincide with
    the Gram forms ``M^T M / m`` and ``M M^T / n``. ``form="gram"`` uses the
    Gram forms directly, for which the identity is unconditional.
    """
    M = np.asarray(M, dtype=np.float64)
    m, n = M.shape
    if check:
        res = standardization_residual(M)
        if res > check_tol:
            raise NotStandardized(f"standardization residual {res:.3e} > {check_tol:.1e}")
    if form == "pearson":
        PC, PR = column_correlation(M), _pearson_rows(M)
    elif form == "gram":
        PC, PR = M.T @ M / m, M @ M.T / n
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(abs(np.linalg.norm(PR) / m - np.linalg.norm(PC) / n))


def layer_diagnostics(stack, p: int, smv_sample: int = 0, corr_sample: int = 0, rng=None) -> list:
    """Per-layer Corr and SMV on the user block, item block and all rows."""
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = []
    for l, E in enumerate(stack.layers):
        blocks = {"user": E[:p], "item": E[p:], "all": E}
        row = {"layer": l}
        for side, B in blocks.items():
            C = B
            if 0 < corr_sample < len(B):
                C = B[np.sort(rng.choice(len(B), size=corr_sample, replace=False))]
            row[f"corr_{side}"] = corr_metric(C)
        for side, B in blocks.items():
            row[f"smv_{side}"] = smv_metric(B, smv_sample, rng)
        rows.append(row)
    return rows
