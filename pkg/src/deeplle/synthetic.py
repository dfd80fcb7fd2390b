"""Analytic test sequences whose frames can be rendered at any real time.

Shapes are rendered with exact box-filtered pixel coverage, so a frame at a
fractional time is a genuine in-between frame and serves as ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import FrameSequence

KINDS = ("translating_square", "two_squares", "rotating_gradient")


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel ``[i, i+1)`` covered by the interval ``[lo, hi]``."""
    px = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(px + 1.0, hi) - np.maximum(px, lo), 0.0, 1.0)


def _box(x0: float, y0: float, side: float, size: int) -> np.ndarray:
    return np.outer(_coverage(y0, y0 + side, size), _coverage(x0, x0 + side, size))


@dataclass
class Scene:
    """A seeded scene description; ``render(t)`` gives the frame at time ``t``.

    ``params`` (all optional):
        velocity: (vx, vy) in pixels per frame for the first square.
        velocity2: (vx, vy) for the second square of ``two_squares``.
        side: square side in pixels.
        angular_velocity: radians per frame for ``rotating_gradient``.
    """

    kind: str
    size: int = 64
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {KINDS}")
        rng = np.random.default_rng(self.seed)
        s = self.size
        self.side = float(self.params.get("side", s // 4))
        self.velocity = np.asarray(self.params.get("velocity", (2.0, 0.0)), dtype=float)
        self.velocity2 = np.asarray(self.params.get("velocity2", (-1.0, 1.0)), dtype=float)
        self.angular_velocity = float(self.params.get("angular_velocity", 0.08))
        # colors kept away from the ends of the range so tanh outputs can reach them
        self.background = rng.uniform(0.15, 0.45, size=3)
        self.tilt = rng.uniform(-0.1, 0.1, size=(3, 2))
        self.color = rng.uniform(0.6, 0.9, size=3)
        self.color2 = rng.uniform(0.05, 0.35, size=3)
        self.origin = rng.uniform(s * 0.15, s * 0.3, size=2)
        self.origin2 = rng.uniform(s * 0.5, s * 0.6, size=2)
        self.phase = rng.uniform(0, 2 * np.pi, size=3)
        self.angle0 = rng.uniform(0, np.pi)
        self.frequency = rng.uniform(1.5, 2.5) / s

    def motion_per_frame(self) -> float:
        if self.kind == "rotating_gradient":
            return abs(self.angular_velocity) * self.size / np.sqrt(2)
        speeds = [np.hypot(*self.velocity)]
        if self.kind == "two_squares":
            speeds.append(np.hypot(*self.velocity2))
        return max(speeds)

    def _backdrop(self) -> np.ndarray:
        c = np.linspace(-0.5, 0.5, self.size)
        yy, xx = np.meshgrid(c, c, indexing="ij")
        return np.stack([self.background[k] + self.tilt[k, 0] * xx + self.tilt[k, 1] * yy for k in range(3)])

    def render(self, t: float) -> np.ndarray:
        """Frame at time ``t`` (in frame units) as float32 (3, H, W) in [-1, 1]."""
        s = self.size
        if self.kind == "rotating_gradient":
            theta = self.angle0 + self.angular_velocity * t
            c = np.arange(s) + 0.5 - s / 2
            yy, xx = np.meshgrid(c, c, indexing="ij")
            u = np.cos(theta) * xx + np.sin(theta) * yy
            img = np.stack([0.5 + 0.35 * np.sin(2 * np.pi * self.frequency * u + self.phase[k]) for k in range(3)])
        else:
            img = self._backdrop()
            pos = self.origin + self.velocity * t
            cov = _box(pos[0], pos[1], self.side, s)
            img = img * (1 - cov) + self.color[:, None, None] * cov
            if self.kind == "two_squares":
                pos2 = self.origin2 + self.velocity2 * t
                cov2 = _box(pos2[0], pos2[1], self.side * 0.75, s)
                img = img * (1 - cov2) + self.color2[:, None, None] * cov2
        return (np.clip(img, 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)

    def sequence(self, count: int, start: float = 0.0) -> FrameSequence:
        frames = np.stack([self.render(start + i) for i in range(count)])
        return FrameSequence(frames, [f"{self.kind}_{i:04d}" for i in range(count)])


def gen_synthetic(kind: str, params: dict | None = None, count: int = 3, size: int = 64,
                  seed: int = 0) -> FrameSequence:
    """Render ``count`` consecutive frames of a synthetic scene.

    Raises:
        ValueError: for unknown kinds or motion above ``size / 4`` per frame.
    """
    scene = Scene(kind, size, seed, dict(params or {}))
    if scene.motion_per_frame() > size / 4:
        raise ValueError(f"motion of {scene.motion_per_frame():.2f} px/frame exceeds size/4 = {size / 4}")
    if count < 2:
        raise ValueError("count must be >= 2")
    seq = scene.sequence(count)
    seq.scene = scene
    return seq
