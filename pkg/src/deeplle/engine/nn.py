"""Differentiable neural-network operations on NCHW tensors."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make

FIT = "fit"
INFERENCE = "inference"


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape (N, C, H, W).
        weight: kernels of shape (O, C, KH, KW).
        bias: optional per-output-channel bias of shape (O,).
        stride: step between kernel applications, same in both directions.
        padding: zero rows/columns added on every side.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIHW kernels, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"input has {c} channels but kernels expect {ci}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0 or h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"conv2d output extent not positive for input {x.shape}, kernel {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")

    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xd.shape[2:]
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # rows: (c, kh, kw), cols: (n, ho, wo)
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = (wmat @ cols).reshape(o, n, ho, wo)
    if bias is not None:
        out += bias.data.reshape(o, 1, 1, 1)
    out = out.transpose(1, 0, 2, 3)
    wshape = weight.shape

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(wshape)
        gcols = (wmat.T @ g2).reshape(c, kh, kw, n, ho, wo)
        gx = np.zeros((c, n, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
        gx = gx.transpose(1, 0, 2, 3)
        if padding:
            gx = gx[:, :, padding:hp - padding, padding:wp - padding]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make(np.ascontiguousarray(out), parents, bw)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """``max(x, slope*x)``; the derivative at exactly 0 is taken as 1."""
    x = as_tensor(x)
    d = x.data
    pos = d >= 0
    scale = np.where(pos, 1.0, slope).astype(d.dtype)
    return make(d * scale, (x,), lambda g: (g * scale,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    d = x.data
    neg = alpha * np.expm1(np.minimum(d, 0))
    out = np.where(d > 0, d, neg)
    deriv = np.where(d > 0, 1.0, neg + alpha).astype(d.dtype)
    return make(out, (x,), lambda g: (g * deriv,))


_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805


def selu(x: Tensor) -> Tensor:
    return elu(x, _SELU_ALPHA) * _SELU_SCALE


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1.0 - out * out),))


ACTIVATIONS = {
    "lrelu": lambda t: leaky_relu(t, 0.1),
    "relu": relu,
    "elu": elu,
    "selu": selu,
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` at fit time so
    inference is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in (FIT, INFERENCE):
        raise ValueError(f"unknown mode {mode!r}")
    x = as_tensor(x)
    if mode == INFERENCE or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    return make(x.data * mask, (x,), lambda g: (g * mask,))


def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=64)
def bicubic_matrix(n: int, factor: int, dtype: str = "float64") -> np.ndarray:
    """Dense ``(n*factor, n)`` operator that upsamples a 1-D signal.

    Output sample ``i`` sits at source coordinate ``(i + 0.5)/factor - 0.5``;
    taps falling outside ``[0, n-1]`` are clamped to the edge.
    """
    m = n * factor
    mat = np.zeros((m, n))
    src = (np.arange(m) + 0.5) / factor - 0.5
    base = np.floor(src).astype(int)
    for off in (-1, 0, 1, 2):
        idx = base + off
        wts = cubic_kernel(src - idx)
        np.add.at(mat, (np.arange(m), np.clip(idx, 0, n - 1)), wts)
    mat = mat.astype(dtype)
    mat.flags.writeable = False
    return mat


def upsample_bicubic(x: Tensor, factor: int) -> Tensor:
    """Separable bicubic upsampling of the two trailing axes by an integer factor."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    x = as_tensor(x)
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    uh = bicubic_matrix(h, factor, x.dtype.name)
    uw = bicubic_matrix(w, factor, x.dtype.name)
    out = uh @ x.data @ uw.T
    return make(out, (x,), lambda g: (uh.T @ g @ uw,))
