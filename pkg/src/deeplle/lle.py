"""Classic locally linear embedding.

Kept as a small, oracle-tested reference: the interpolation model replaces
the learned weights with fixed relative positions, but the two problems it
is built on (reconstruction weights, weight-preserving embedding) live here.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg


class LLEError(RuntimeError):
    pass


def _as_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"data matrix must be m x n with m >= 2, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix has non-finite entries")
    return X


def find_neighbors(X, i: int, k: int) -> np.ndarray:
    """Indices of the ``k`` samples nearest to ``X[i]``, excluding ``i``.

    Equal distances are broken in favour of the smaller index.
    """
    X = _as_data(X)
    m = X.shape[0]
    if not 1 <= k <= m - 1:
        raise ValueError(f"k must be in [1, {m - 1}], got {k}")
    d2 = np.sum((X - X[i]) ** 2, axis=1)
    order = np.lexsort((np.arange(m), d2))
    return order[order != i][:k]


def solve_weights(X, i: int, neighbors, reg: float = 1e-3) -> np.ndarray:
    """Affine reconstruction weights of ``X[i]`` from its neighbors.

    Solves ``(C + reg * trace(C) * I) w = 1`` for the local Gram matrix
    ``C_ab = (X_i - X_a) . (X_i - X_b)`` and rescales ``w`` to sum to one.

    Raises:
        LLEError: if the (possibly regularized) system is singular.
    """
    X = _as_data(X)
    nb = np.asarray(neighbors, dtype=int)
    if nb.size == 0:
        raise ValueError("neighbor set is empty")
    if i in nb:
        raise ValueError(f"sample {i} cannot be its own neighbor")
    D = X[i] - X[nb]
    C = D @ D.T
    tr = np.trace(C)
    if reg > 0 and tr > 0:
        C = C + reg * tr * np.eye(len(nb))
    try:
        w = scipy.linalg.solve(C, np.ones(len(nb)), assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise LLEError(f"local Gram system for sample {i} is singular") from exc
    if not np.all(np.isfinite(w)) or abs(w.sum()) < 1e-300:
        raise LLEError(f"local Gram system for sample {i} is singular")
    return w / w.sum()


def reconstruction_error(X, W) -> float:
    """Sum over samples of ``||X_i - sum_j W_ij X_j||²``."""
    X = np.asarray(X, dtype=np.float64)
    R = X - np.asarray(W) @ X
    return float(np.sum(R * R))


embedding_cost = reconstruction_error


def weight_matrix(X, k: int, reg: float = 1e-3):
    """Dense ``m x m`` weights plus the neighborhood of every row."""
    X = _as_data(X)
    m = X.shape[0]
    W = np.zeros((m, m))
    hoods = []
    for i in range(m):
        nb = find_neighbors(X, i, k)
        W[i, nb] = solve_weights(X, i, nb, reg)
        hoods.append(nb)
    return W, hoods


def embed(W, k: int) -> np.ndarray:
    """Low-dimensional coordinates that best preserve the weights ``W``.

    Returns the ``m x k`` matrix of eigenvectors of ``(I - W)^T (I - W)``
    for the ``k`` smallest eigenvalues after the constant one, scaled so
    columns are zero-mean with ``Y^T Y / m = I``.
    """
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[0]
    if W.shape != (m, m):
        raise ValueError(f"weight matrix must be square, got {W.shape}")
    if not 1 <= k <= m - 1:
        raise ValueError(f"target dimension must be in [1, {m - 1}], got {k}")
    A = np.eye(m) - W
    M = A.T @ A
    # work in the complement of the constant vector so a degenerate null
    # space can never hand back a translated copy of the constant solution
    Q = scipy.linalg.null_space(np.ones((1, m)))
    R = Q.T @ M @ Q
    try:
        vals, vecs = scipy.linalg.eigh(0.5 * (R + R.T))
    except scipy.linalg.LinAlgError as exc:
        raise LLEError("eigen-decomposition failed") from exc
    Y = Q @ vecs[:, :k]
    return Y * np.sqrt(m)
