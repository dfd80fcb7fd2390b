"""Frame sequences on disk: lossless PNG / binary PPM in, PNG out."""
from __future__ import annotations

import glob
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SUPPORTED = {".png", ".ppm", ".pnm"}


class FrameError(ValueError):
    pass


@dataclass
class FrameSequence:
    """``N + 1`` temporally uniform frames, shape (N+1, C, H, W), values in [-1, 1]."""

    frames: np.ndarray
    names: list = field(default_factory=list)
    interval: float = 1.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[0] < 2:
            raise FrameError(f"a sequence needs at least 2 frames of shape (C, H, W), got {self.frames.shape}")
        if self.frames.min() < -1.0 - 1e-6 or self.frames.max() > 1.0 + 1e-6:
            raise FrameError("frame values must lie in [-1, 1]")
        if not self.names:
            self.names = [f"frame_{i:04d}" for i in range(len(self.frames))]

    @property
    def n(self) -> int:
        """Number of intervals between the first and last frame."""
        return self.frames.shape[0] - 1

    @property
    def frame_shape(self) -> tuple:
        return self.frames.shape[1:]

    def __len__(self):
        return self.frames.shape[0]

    def subset(self, indices) -> "FrameSequence":
        indices = list(indices)
        return FrameSequence(self.frames[indices], [self.names[i] for i in indices], self.interval)

    def unit(self) -> np.ndarray:
        """Frames mapped to [0, 1]."""
        return self.frames * 0.5 + 0.5


def _expand(pattern) -> list:
    if isinstance(pattern, (list, tuple)):
        return [str(p) for p in pattern]
    p = Path(pattern)
    if p.is_dir():
        files = [str(f) for f in p.iterdir() if f.suffix.lower() in SUPPORTED]
    else:
        files = glob.glob(str(pattern))
    return sorted(files)


def read_image(path) -> np.ndarray:
    """Decode one image to float32 (C, H, W) in [-1, 1]."""
    ext = Path(path).suffix.lower()
    if ext not in SUPPORTED:
        raise FrameError(f"{path}: unsupported format {ext!r} (use PNG or binary PPM)")
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "L"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except OSError as exc:
        raise FrameError(f"{path}: cannot decode image ({exc})") from exc
    if arr.dtype != np.uint8:
        raise FrameError(f"{path}: only 8-bit images are supported")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.transpose(2, 0, 1).astype(np.float32) / 127.5 - 1.0


def load_frames(pattern) -> FrameSequence:
    """Load a directory, glob pattern, or explicit list of files.

    Lexicographic file order is taken as temporal order.
    """
    files = _expand(pattern)
    if len(files) < 2:
        raise FrameError(f"need at least 2 frames, found {len(files)} for {pattern!r}")
    frames = []
    for f in files:
        if not os.path.isfile(f):
            raise FrameError(f"missing frame file {f}")
        img = read_image(f)
        if frames and img.shape != frames[0].shape:
            raise FrameError(f"{f}: shape {img.shape} differs from {files[0]} {frames[0].shape}")
        frames.append(img)
    return FrameSequence(np.stack(frames), [Path(f).stem for f in files])


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(C, H, W) floats in [0, 1] to an (H, W, C) byte image."""
    arr = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    arr = np.rint(arr * 255.0).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def save_frames(frames, directory, prefix: str = "frame", fmt: str = "png") -> list:
    """Write (K, C, H, W) frames in [0, 1] as ``prefix_0000.png`` ... and return the paths."""
    fmt = fmt.lower()
    if f".{fmt}" not in SUPPORTED:
        raise FrameError(f"unsupported output format {fmt!r}")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FrameError(f"cannot create output directory {directory}: {exc}") from exc
    paths = []
    for i, frame in enumerate(np.asarray(frames)):
        img = to_uint8(frame)
        if img.shape[2] == 1:
            img = img[:, :, 0]
        path = directory / f"{prefix}_{i:04d}.{fmt}"
        try:
            Image.fromarray(img).save(path, format="PPM" if fmt in ("ppm", "pnm") else "PNG")
        except OSError as exc:
            raise FrameError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths
