"""He initialization and the ADAM optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor


def he_init(shape, fan_in: int, rng_seed=None, dtype=np.float32) -> Tensor:
    """Zero-mean normal samples with variance ``2 / fan_in``.

    ``rng_seed`` may be an integer seed or an existing ``numpy.random.Generator``.
    """
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], **kwargs)


def adam_step(params: Sequence[Tensor], grads, state: AdamState, lr: float) -> AdamState:
    """Apply one bias-corrected ADAM update to ``params`` in place.

    ``grads`` is either a sequence aligned with ``params`` or a mapping from
    parameter tensor to gradient (what ``Graph.backward`` returns).
    """
    params = list(params)
    if isinstance(grads, Mapping):
        grads = [grads[p] for p in params]
    grads = [g.data if isinstance(g, Tensor) else np.asarray(g) for g in grads]
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("params, grads and optimizer state have different lengths")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = lr / (1.0 - b1 ** t)
    corr2 = 1.0 / (1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (step * m / (np.sqrt(v * corr2) + state.epsilon)).astype(p.dtype, copy=False)
    return state
