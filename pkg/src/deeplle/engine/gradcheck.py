"""Central finite-difference checks for the tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6) -> list:
    """d fn / d input for every input, by central differences (no graph)."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            hi = fn(*[Tensor(a) for a in arrays]).item()
            arr[idx] = orig - eps
            lo = fn(*[Tensor(a) for a in arrays]).item()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list:
    params = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    with Graph() as g:
        loss = fn(*params)
        grads = g.backward(loss, params)
    return [grads[p].data for p in params]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)`` over the whole array; 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6) -> float:
    """Worst relative error between tape and finite-difference gradients."""
    ana = analytic_grad(fn, inputs)
    num = numeric_grad(fn, inputs, eps)
    return max(relative_error(a, n) for a, n in zip(ana, num))
