"""Dense tensors and a tape-based reverse-mode differentiation graph.

Operations only record onto a :class:`Graph` while one is active (``with
Graph() as g:``). Outside a graph every op is a plain numpy computation,
which is what inference uses.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GraphError(RuntimeError):
    pass


def current_graph() -> Optional["Graph"]:
    return getattr(_state, "graph", None)


@contextmanager
def no_graph():
    """Suspend recording, even inside an enclosing ``with Graph()`` block."""
    previous = current_graph()
    _state.graph = None
    try:
        yield
    finally:
        _state.graph = previous


class _Node:
    __slots__ = ("parents", "backward", "shape")

    def __init__(self, parents, backward, shape):
        self.parents = parents
        self.backward = backward
        self.shape = shape


class Graph:
    """Append-only tape of recorded operations.

    Nodes are appended in execution order, so parents always precede their
    children and the reverse sweep is a plain reversed walk of the tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, int] = {}
        self._consumed = False

    def __enter__(self) -> "Graph":
        self._previous = current_graph()
        _state.graph = self
        return self

    def __exit__(self, *exc):
        _state.graph = self._previous
        return False

    def reset(self) -> None:
        self.nodes.clear()
        self._leaves.clear()
        self._consumed = False

    def _leaf_node(self, t: "Tensor") -> int:
        idx = self._leaves.get(id(t))
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(_Node((), None, t.data.shape))
            self._leaves[id(t)] = idx
        return idx

    def _handle(self, t: "Tensor") -> Optional[int]:
        if t.grad_node is not None and t.grad_node[0] is self:
            return t.grad_node[1]
        if t.requires_grad:
            return self._leaf_node(t)
        return None

    def record(self, out: "Tensor", parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        if self._consumed:
            raise GraphError("graph already differentiated; call reset() before recording")
        handles = tuple(self._handle(p) for p in parents)
        if all(h is None for h in handles):
            return out
        self.nodes.append(_Node(handles, backward, out.data.shape))
        out.grad_node = (self, len(self.nodes) - 1)
        return out

    def backward(self, loss: "Tensor", params: Optional[Iterable["Tensor"]] = None) -> dict["Tensor", "Tensor"]:
        """Differentiate a scalar ``loss`` with respect to ``params``.

        Returns a map from each parameter tensor to its gradient. Parameters
        that the loss does not depend on receive zeros.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise GraphError("backward already called on this graph; reset() it first")
        if loss.grad_node is None or loss.grad_node[0] is not self:
            raise GraphError("loss does not belong to this graph")
        self._consumed = True

        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        root = loss.grad_node[1]
        grads[root] = np.ones(self.nodes[root].shape, dtype=loss.data.dtype)
        for i in range(root, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            parent_grads = node.backward(g)
            for h, pg in zip(node.parents, parent_grads):
                if h is None or pg is None:
                    continue
                if grads[h] is None:
                    grads[h] = pg
                else:
                    grads[h] = grads[h] + pg
            if i != root:
                grads[i] = None

        out: dict[Tensor, Tensor] = {}
        for p in params or ():
            idx = self._leaves.get(id(p))
            g = grads[idx] if idx is not None else None
            out[p] = Tensor(np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False))
        return out


def backward(loss: "Tensor", params: Optional[Iterable["Tensor"]] = None) -> dict["Tensor", "Tensor"]:
    if loss.grad_node is None:
        raise GraphError("loss is not attached to a graph")
    return loss.grad_node[0].backward(loss, params)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def as_tensor(x, dtype=None) -> "Tensor":
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make(data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
    """Wrap an op result, recording it when a graph is active."""
    out = Tensor(data)
    g = current_graph()
    if g is not None:
        g.record(out, parents, backward)
    return out


class Tensor:
    """An n-dimensional float array that can take part in a :class:`Graph`.

    ``requires_grad`` marks leaves (parameters, or inputs under a gradient
    check) whose gradients ``Graph.backward`` can report.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if 0 in arr.shape:
            raise ValueError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad_node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        src = self
        return make(self.data.astype(dtype), (self,), lambda g: (g.astype(src.dtype),))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return self.shape[0]

    # elementwise arithmetic

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self.shape, other.shape
        return make(self.data + other.data, (self, other),
                    lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self.shape, other.shape
        return make(self.data - other.data, (self, other),
                    lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        x, y = self.data, other.data
        return make(x * y, (self, other),
                    lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        x, y = self.data, other.data
        out = x / y
        return make(out, (self, other),
                    lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)))

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __neg__(self):
        return make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p: float):
        x = self.data
        if p == 2:
            return make(x * x, (self,), lambda g: (2.0 * g * x,))
        return make(x ** p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(self._coerce(other), self)

    def __getitem__(self, idx):
        x = self.data

        def bw(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return (full,)

        return make(x[idx], (self,), bw)

    # reductions and shape ops

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def flatten(self, start: int = 1):
        return self.reshape(self.shape[:start] + (-1,))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def abs(self):
        x = self.data
        return make(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def sqrt(self):
        out = np.sqrt(self.data)
        return make(out, (self,), lambda g: (g * 0.5 / out,))

    def exp(self):
        out = np.exp(self.data)
        return make(out, (self,), lambda g: (g * out,))

    def minimum(self, bound: float):
        """Elementwise ``min(x, bound)``; ties pass the gradient through."""
        x = self.data
        return make(np.minimum(x, bound), (self,), lambda g: (g * (x <= bound),))

    def maximum(self, bound: float):
        x = self.data
        return make(np.maximum(x, bound), (self,), lambda g: (g * (x >= bound),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting semantics."""
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if x.shape[-1] != y.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {x.shape} @ {y.shape}")

    def bw(g):
        ga = g @ np.swapaxes(y, -1, -2) if a.requires_grad or a.grad_node is not None else None
        gb = np.swapaxes(x, -1, -2) @ g if b.requires_grad or b.grad_node is not None else None
        return (None if ga is None else _unbroadcast(ga, x.shape),
                None if gb is None else _unbroadcast(gb, y.shape))

    return make(x @ y, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Residual addition; identical to ``a + b``."""
    return as_tensor(a) + as_tensor(b)


def forward_diff(x: Tensor, axis: int) -> Tensor:
    """Forward difference ``x[i+1] - x[i]`` along ``axis`` (length shrinks by one)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] < 2:
        raise ValueError(f"forward difference needs extent >= 2 along axis {axis}")
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)

    def bw(g):
        full = np.zeros_like(x.data)
        full[hi] += g
        full[lo] -= g
        return (full,)

    return make(x.data[hi] - x.data[lo], (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)
