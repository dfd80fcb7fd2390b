"""Auto-encoder with a linear latent path between two node frames.

The encoder maps the first and last reference frames (the *nodes*) to latent
codes. Every reference frame is reconstructed from a convex mix of the two
node codes chosen by its relative temporal position, collected in a
relative position matrix (RPM) whose rows are ``(1 - s, s)``. After fitting,
new frames come from decoding mixes at any ``s`` in ``[0, 1]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .engine import (FIT, INFERENCE, AdamState, Graph, Tensor, activation, adam_step, conv2d,
                     dropout, he_init, matmul, tanh, upsample_bicubic)
from .engine.tensor import as_tensor, no_graph
from .quality import LossWeights, loss_terms

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderBlock:
    channels: int
    stride: int = 2


@dataclass(frozen=True)
class DecoderBlock:
    convs: int
    channels: int
    upsample: int = 2


@dataclass(frozen=True)
class ArchConfig:
    """Encoder/decoder layout.

    The encoder is a stack of residual blocks (two 3x3 convolutions plus a
    1x1 projection shortcut when the shape changes). Each decoder block
    upsamples bicubically and then applies ``convs`` convolutions; a final
    convolution maps to image channels under ``tanh``. Dropout follows the
    decoder blocks listed (1-based) in ``dropout_after``.
    """

    frame_shape: tuple = (3, 64, 64)
    encoder: tuple = (EncoderBlock(16), EncoderBlock(32), EncoderBlock(64), EncoderBlock(64))
    decoder: tuple = (DecoderBlock(3, 32), DecoderBlock(5, 16), DecoderBlock(7, 16), DecoderBlock(9, 8))
    kernel_size: int = 5
    encoder_kernel: int = 3
    activation: str = "lrelu"
    dropout_after: tuple = (3, 4)
    dropout_p: float = 0.5
    upsample_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "frame_shape", tuple(int(v) for v in self.frame_shape))
        object.__setattr__(self, "encoder", tuple(
            b if isinstance(b, EncoderBlock) else EncoderBlock(**b) for b in self.encoder))
        object.__setattr__(self, "decoder", tuple(
            b if isinstance(b, DecoderBlock) else DecoderBlock(**b) for b in self.decoder))
        object.__setattr__(self, "dropout_after", tuple(int(i) for i in self.dropout_after))
        self.validate()

    @property
    def latent_shape(self) -> tuple:
        _, h, w = self.frame_shape
        for b in self.encoder:
            h, w = h // b.stride, w // b.stride
        return (self.encoder[-1].channels, h, w)

    @property
    def latent_dim(self) -> int:
        return math.prod(self.latent_shape)

    def validate(self) -> None:
        c, h, w = self.frame_shape
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder need at least one block each")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.dropout_p}")
        if self.kernel_size % 2 == 0 or self.encoder_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd to keep spatial extents")
        activation(self.activation)
        for b in self.encoder:
            if b.stride < 1 or b.channels < 1:
                raise ValueError(f"bad encoder block {b}")
            if h % b.stride or w % b.stride:
                raise ValueError(f"encoder stride {b.stride} does not divide spatial extent {h}x{w}")
            h, w = h // b.stride, w // b.stride
        for b in self.decoder:
            if b.upsample < 1 or b.channels < 1 or b.convs < 1:
                raise ValueError(f"bad decoder block {b}")
            h, w = h * b.upsample, w * b.upsample
        if (h, w) != tuple(self.frame_shape[1:]):
            raise ValueError(
                f"decoder reproduces {h}x{w} from the latent map, expected {self.frame_shape[1]}x{self.frame_shape[2]}")
        for i in self.dropout_after:
            if not 1 <= i <= len(self.decoder):
                raise ValueError(f"dropout position {i} outside decoder blocks 1..{len(self.decoder)}")

    def replace(self, **changes) -> "ArchConfig":
        d = self.to_dict()
        d.update(changes)
        return ArchConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_shape"] = list(self.frame_shape)
        d["dropout_after"] = list(self.dropout_after)
        d["encoder"] = [asdict(b) for b in self.encoder]
        d["decoder"] = [asdict(b) for b in self.decoder]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


def _enc(*spec):
    return tuple(EncoderBlock(c, s) for c, s in spec)


def _dec(*spec):
    return tuple(DecoderBlock(n, c, u) for n, c, u in spec)


PRESETS = {
    # desk presets use 3x3 decoder kernels to fit single-core CPU budgets
    "desk64": ArchConfig(kernel_size=3),
    "desk32": ArchConfig(
        frame_shape=(3, 32, 32),
        kernel_size=3,
        encoder=_enc((16, 2), (32, 2), (64, 2)),
        decoder=_dec((3, 32, 1), (5, 32, 2), (7, 16, 2), (9, 16, 2)),
    ),
    # full-resolution layouts in the ResNet-18 family; not meant for CPU runs
    "ucf": ArchConfig(
        frame_shape=(3, 240, 320),
        encoder=_enc((64, 1), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1)),
        decoder=_dec((3, 256, 1), (5, 128, 2), (7, 64, 2), (9, 32, 2)),
    ),
    "davis": ArchConfig(
        frame_shape=(3, 224, 384),
        encoder=_enc((64, 2), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1)),
        decoder=_dec((3, 256, 2), (5, 128, 2), (7, 64, 2), (9, 32, 2)),
    ),
}


def preset(name: str, **changes) -> ArchConfig:
    try:
        arch = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown arch preset {name!r}; choose from {sorted(PRESETS)}") from None
    return arch.replace(**changes) if changes else arch


@dataclass
class ModelState:
    arch: ArchConfig
    params: dict
    seed: int
    rng: np.random.Generator = field(repr=False, default=None)

    def parameters(self) -> list:
        return list(self.params.values())

    def encoder_params(self) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith("enc.")}

    def decoder_params(self) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith("dec.")}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def _param_shapes(arch: ArchConfig) -> list:
    """(name, shape, fan_in) for every parameter, in a fixed order."""
    shapes = []
    cin = arch.frame_shape[0]
    k = arch.encoder_kernel
    for i, b in enumerate(arch.encoder):
        pre = f"enc.{i}"
        shapes += [(f"{pre}.conv1.w", (b.channels, cin, k, k), cin * k * k),
                   (f"{pre}.conv1.b", (b.channels,), 0),
                   (f"{pre}.conv2.w", (b.channels, b.channels, k, k), b.channels * k * k),
                   (f"{pre}.conv2.b", (b.channels,), 0)]
        if b.stride != 1 or b.channels != cin:
            shapes += [(f"{pre}.proj.w", (b.channels, cin, 1, 1), cin),
                       (f"{pre}.proj.b", (b.channels,), 0)]
        cin = b.channels
    k = arch.kernel_size
    for i, b in enumerate(arch.decoder):
        for j in range(b.convs):
            shapes += [(f"dec.{i}.conv{j}.w", (b.channels, cin, k, k), cin * k * k),
                       (f"dec.{i}.conv{j}.b", (b.channels,), 0)]
            cin = b.channels
    out = arch.frame_shape[0]
    shapes += [("dec.out.w", (out, cin, k, k), cin * k * k), ("dec.out.b", (out,), 0)]
    return shapes


def build_model(arch: ArchConfig, seed: int = 0) -> ModelState:
    """He-initialized weights and zero biases, deterministic in ``seed``."""
    arch.validate()
    init_seq, drop_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    params = {}
    for name, shape, fan_in in _param_shapes(arch):
        if name.endswith(".b"):
            params[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
        else:
            params[name] = he_init(shape, fan_in, rng)
    return ModelState(arch, params, seed, np.random.default_rng(drop_seq))


# relative position matrices

@dataclass(frozen=True)
class RPM:
    """Rows ``(1 - s, s)`` for normalized temporal positions ``s``."""

    positions: tuple

    def __post_init__(self):
        pos = tuple(float(s) for s in self.positions)
        if not pos:
            raise ValueError("an RPM needs at least one row")
        for s in pos:
            if not 0.0 <= s <= 1.0 or math.isnan(s):
                raise ValueError(f"relative position {s} outside [0, 1]")
        object.__setattr__(self, "positions", pos)

    @property
    def matrix(self) -> np.ndarray:
        s = np.asarray(self.positions)
        return np.stack([1.0 - s, s], axis=1)

    def __len__(self):
        return len(self.positions)


def fit_rpm(n: int) -> RPM:
    """RPM reconstructing ``n + 1`` evenly spaced references at ``s = j/n``."""
    if n < 1:
        raise ValueError(f"interval count must be >= 1, got {n}")
    return RPM(tuple(j / n for j in range(n + 1)))


def rpm_from_positions(positions: Sequence) -> RPM:
    return RPM(tuple(float(Fraction(s)) if isinstance(s, str) else s for s in positions))


def halfway_positions(n: int) -> list:
    """Positions midway between consecutive references of an ``n``-interval fit."""
    if n < 1:
        raise ValueError(f"interval count must be >= 1, got {n}")
    return [(2 * j + 1) / (2 * n) for j in range(n)]


def subdivision_positions(n: int, per_gap: int) -> list:
    """``per_gap`` evenly spaced new positions inside each of the ``n`` gaps."""
    return [(j + (i + 1) / (per_gap + 1)) / n for j in range(n) for i in range(per_gap)]


# forward passes

def _conv(model, name, x, stride=1, padding=0):
    return conv2d(x, model.params[name + ".w"], model.params[name + ".b"], stride, padding)


def encode(frames, model: ModelState) -> Tensor:
    """Latent codes, one flattened row per input frame."""
    arch = model.arch
    x = as_tensor(frames)
    if x.ndim != 4 or x.shape[1:] != arch.frame_shape:
        raise ValueError(f"expected frames of shape (B, {', '.join(map(str, arch.frame_shape))}), got {x.shape}")
    act = activation(arch.activation)
    pad = arch.encoder_kernel // 2
    for i, b in enumerate(arch.encoder):
        pre = f"enc.{i}"
        h = act(_conv(model, f"{pre}.conv1", x, b.stride, pad))
        h = _conv(model, f"{pre}.conv2", h, 1, pad)
        skip = _conv(model, f"{pre}.proj", x, b.stride) if f"{pre}.proj.w" in model.params else x
        x = act(h + skip)
    return x.reshape(x.shape[0], -1)


def encode_nodes(nodes, model: ModelState) -> Tensor:
    """Codes ``(z_0, z_N)`` of the two node frames as a 2 x k matrix."""
    nodes = as_tensor(nodes)
    if nodes.ndim != 4 or nodes.shape[0] != 2:
        raise ValueError(f"expected exactly two node frames, got shape {nodes.shape}")
    return encode(nodes, model)


def interpolate_latent(rpm, codes) -> Tensor:
    """``M @ Z``: row r is ``z_0 + s_r (z_N - z_0)``."""
    codes = as_tensor(codes)
    m = rpm.matrix if isinstance(rpm, RPM) else np.asarray(rpm)
    if m.ndim != 2 or m.shape[1] != 2 or codes.ndim != 2 or codes.shape[0] != 2:
        raise ValueError(f"cannot mix codes of shape {codes.shape} with an RPM of shape {m.shape}")
    return matmul(Tensor(m.astype(codes.dtype)), codes)


def decode(latent, model: ModelState, mode: str = INFERENCE) -> Tensor:
    """Frames in [0, 1] from latent rows; dropout is only active in fit mode."""
    arch = model.arch
    z = as_tensor(latent)
    if z.ndim != 2 or z.shape[1] != arch.latent_dim:
        raise ValueError(f"latent rows must have dimension {arch.latent_dim}, got shape {z.shape}")
    act = activation(arch.activation)
    pad = arch.kernel_size // 2
    h = z.reshape((z.shape[0],) + arch.latent_shape)
    for i, b in enumerate(arch.decoder):
        if arch.upsample_first:
            h = upsample_bicubic(h, b.upsample)
        for j in range(b.convs):
            h = act(_conv(model, f"dec.{i}.conv{j}", h, 1, pad))
        if not arch.upsample_first:
            h = upsample_bicubic(h, b.upsample)
        if i + 1 in arch.dropout_after:
            h = dropout(h, arch.dropout_p, mode, model.rng)
    y = tanh(_conv(model, "dec.out", h, 1, pad))
    return y * 0.5 + 0.5


def synthesize(model: ModelState, codes, rpm: RPM) -> np.ndarray:
    """Decode one frame per RPM row at inference; returns (rows, C, H, W) in [0, 1]."""
    with no_graph():
        return decode(interpolate_latent(rpm, codes), model, INFERENCE).data


# fitting

@dataclass
class FitConfig:
    iterations: int = 5000
    learning_rate: float = 1e-4
    lr_schedule: bool = False
    milestones: tuple = (2500, 3750)
    weights: LossWeights = field(default_factory=LossWeights)
    use_lle: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.lr_schedule and any(not 0 < m < self.iterations for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} must lie inside (0, {self.iterations})")

    def lr_at(self, iteration: int) -> float:
        """Learning rate for 0-based ``iteration``; halves once per passed milestone."""
        if not self.lr_schedule:
            return self.learning_rate
        return self.learning_rate * 0.5 ** sum(iteration >= m for m in self.milestones)


TRACE_COLUMNS = ("iteration", "total", "huber", "grad", "ssim", "lr")


@dataclass
class FitResult:
    model: ModelState
    trace: np.ndarray
    codes: np.ndarray

    @property
    def losses(self) -> np.ndarray:
        return self.trace[:, 1]


def to_unit_range(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames) * 0.5 + 0.5


def fit(frames, model: ModelState, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit ``model`` in place to ``N + 1`` reference frames normalized to [-1, 1].

    Runs exactly ``cfg.iterations`` ADAM steps with no stopping criterion and
    records one trace row per iteration (see ``TRACE_COLUMNS``).
    """
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ValueError(f"need at least two frames of shape (C, H, W), got {frames.shape}")
    n = frames.shape[0] - 1
    targets = Tensor(to_unit_range(frames).astype(np.float32))
    if cfg.use_lle:
        inputs = Tensor(frames[[0, n]])
        rpm = Tensor(fit_rpm(n).matrix.astype(np.float32))
    else:
        # plain auto-encoding of every reference, no mixing rows
        inputs = Tensor(frames)
        rpm = None

    params = model.parameters()
    opt = AdamState.for_params(params)
    trace = np.zeros((cfg.iterations, len(TRACE_COLUMNS)))
    for it in range(cfg.iterations):
        lr = cfg.lr_at(it)
        with Graph() as g:
            codes = encode(inputs, model)
            latent = matmul(rpm, codes) if rpm is not None else codes
            recon = decode(latent, model, FIT)
            terms = loss_terms(targets, recon, cfg.weights)
            total = float(terms.total.data)
            if not math.isfinite(total):
                raise FitError(
                    f"non-finite loss at iteration {it}: huber={float(terms.huber.data)}, "
                    f"grad={float(terms.gradient.data)}, ssim={float(terms.ssim.data)}, lr={lr}")
            grads = g.backward(terms.total, params)
        adam_step(params, grads, opt, lr)
        trace[it] = (it, total, float(terms.huber.data), float(terms.gradient.data),
                     float(terms.ssim.data), lr)
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            logger.info("iter %d loss %.6g huber %.4g grad %.4g ssim %.4f lr %.2g", *trace[it])

    with no_graph():
        codes = encode_nodes(Tensor(frames[[0, n]]), model).data
    return FitResult(model, trace, codes)
