"""Reconstruction losses and image quality metrics.

Every loss here is built from differentiable engine ops and reduces with a
mean, so the weights stay comparable across resolutions and frame counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .engine import Tensor, conv2d, forward_diff, matmul
from .engine.tensor import as_tensor, concat


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.0001
    huber_delta: float = 0.01

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def huber_loss(a: Tensor, b: Tensor, delta: float = 0.01) -> Tensor:
    """Mean Huber penalty of ``a - b``: ``d²/2`` inside ``delta``, linear outside."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    r = (a - b).abs()
    q = r.minimum(delta)
    # 0.5 q^2 + delta (|d| - q) equals the piecewise definition on both branches
    return (q * q * 0.5 + (r - q) * delta).mean()


def gradient_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference between forward-difference image gradients.

    Horizontal and vertical differences are pooled into one mean, so an axis of
    extent 1 simply contributes no terms.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    terms = []
    for axis in (-1, -2):
        if a.shape[axis] >= 2:
            terms.append((forward_diff(a, axis) - forward_diff(b, axis)).abs().reshape(-1))
    if not terms:
        raise ValueError("gradient loss needs at least one spatial extent >= 2")
    return concat(terms).mean()


_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735892, -0.331264108, 0.5],
    [0.5, -0.418687589, -0.081312411],
])
_YCBCR_OFFSET = np.array([0.0, 0.5, 0.5])


def rgb_to_ycbcr(img: Tensor) -> Tensor:
    """Full-range BT.601 conversion of an (N, 3, H, W) image in [0, 1]."""
    img = as_tensor(img)
    if img.ndim != 4 or img.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) RGB input, got {img.shape}")
    kernel = Tensor(_YCBCR.reshape(3, 3, 1, 1).astype(img.dtype))
    offset = Tensor(_YCBCR_OFFSET.astype(img.dtype))
    return conv2d(img, kernel, offset)


def luma(img: Tensor) -> Tensor:
    return rgb_to_ycbcr(img)[:, 0:1]


@lru_cache(maxsize=32)
def _window_matrix(n: int, cfg: SsimConfig, dtype: str) -> np.ndarray:
    """(n - window + 1, n) matrix applying the normalized 1-D Gaussian at each valid offset."""
    r = cfg.window // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / cfg.sigma) ** 2)
    taps /= taps.sum()
    m = n - cfg.window + 1
    mat = np.zeros((m, n))
    for i in range(m):
        mat[i, i:i + cfg.window] = taps
    mat = mat.astype(dtype)
    mat.flags.writeable = False
    return mat


def gaussian_window(cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """The 2-D window as an explicit array (weights sum to 1)."""
    row = _window_matrix(cfg.window, cfg, "float64")[0]
    return np.outer(row, row)


def ssim_map(ya: Tensor, yb: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    ya, yb = as_tensor(ya), as_tensor(yb)
    _check_same(ya, yb)
    if ya.ndim == 4 and ya.shape[1] != 1:
        raise ValueError(f"ssim works on single-channel images, got {ya.shape[1]} channels")
    h, w = ya.shape[-2:]
    if h < cfg.window or w < cfg.window:
        raise ValueError(f"image {h}x{w} smaller than the {cfg.window}x{cfg.window} SSIM window")
    gh = Tensor(_window_matrix(h, cfg, ya.dtype.name))
    gw = Tensor(np.ascontiguousarray(_window_matrix(w, cfg, ya.dtype.name).T))

    def blur(t):
        return matmul(matmul(gh, t), gw)

    mu_a, mu_b = blur(ya), blur(yb)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(ya * ya) - mu_aa
    var_b = blur(yb * yb) - mu_bb
    cov = blur(ya * yb) - mu_ab
    num = (mu_ab * 2.0 + cfg.c1) * (cov * 2.0 + cfg.c2)
    den = (mu_aa + mu_bb + cfg.c1) * (var_a + var_b + cfg.c2)
    return num / den


def ssim(ya: Tensor, yb: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Mean structural similarity over all valid window positions.

    Leading axes are treated as independent images of equal size, so the
    mean equals the average of per-image SSIM values.
    """
    return ssim_map(ya, yb, cfg).mean()


class LossTerms(NamedTuple):
    total: Tensor
    huber: Tensor
    gradient: Tensor
    ssim: Tensor


def loss_terms(refs: Tensor, recon: Tensor, weights: LossWeights = LossWeights(),
               cfg: SsimConfig = SsimConfig()) -> LossTerms:
    refs, recon = as_tensor(refs), as_tensor(recon)
    _check_same(refs, recon)
    if refs.ndim != 4 or refs.shape[1] != 3:
        raise ValueError(f"composite loss expects (N, 3, H, W) images, got {refs.shape}")
    h = huber_loss(refs, recon, weights.huber_delta)
    g = gradient_loss(refs, recon)
    s = ssim(luma(refs), luma(recon), cfg)
    total = h + g * weights.lambda1 - s * weights.lambda2
    return LossTerms(total, h, g, s)


def composite_loss(refs: Tensor, recon: Tensor, weights: LossWeights = LossWeights(),
                   cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Huber + lambda1 * gradient L1 - lambda2 * SSIM on luma."""
    return loss_terms(refs, recon, weights, cfg).total


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim_value(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    """SSIM between two RGB frames (3, H, W) or luma images, as a float64 metric."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 3:
        ya, yb = luma(Tensor(a[None])), luma(Tensor(b[None]))
    else:
        ya, yb = Tensor(a), Tensor(b)
    return float(ssim(ya, yb, cfg).data)
