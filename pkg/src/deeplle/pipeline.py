"""Fit -> synthesize -> evaluate, plus the on-disk run layout.

A run directory always looks like::

    frames/           synthesized frames, frame_0000.png ...
    report.txt        key=value summary (deterministic; no timings)
    metrics.csv       per-frame metrics
    checkpoint.dlle   fitted model and node codes
    loss_trace.csv    iteration,total,huber,grad,ssim,lr
    timing.txt        wall-clock seconds (kept out of the report so reports
                      of identical runs are byte-identical)
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .frames import FrameSequence, load_frames, save_frames
from .model import (TRACE_COLUMNS, FitConfig, RPM, build_model, fit, fit_rpm, halfway_positions,
                    preset, rpm_from_positions, subdivision_positions, synthesize)
from .quality import LossWeights, psnr, ssim_value

logger = logging.getLogger(__name__)

DAVIS_POSITIONS = (1 / 6, 1 / 4, 1 / 3, 2 / 3, 3 / 4, 5 / 6)


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    input: Optional[str] = None
    output: Optional[str] = None
    preset: str = "desk64"
    iterations: int = 5000
    learning_rate: float = 1e-4
    lr_schedule: bool = False
    milestones: tuple = (2500, 3750)
    lambda1: float = 0.1
    lambda2: float = 0.0001
    huber_delta: float = 0.01
    positions: object = "halfway"
    activation: str = "lrelu"
    dropout: bool = True
    lle: bool = True
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.lr_schedule and any(m >= self.iterations for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} must be below iterations={self.iterations}")

    def fit_config(self) -> FitConfig:
        return FitConfig(
            iterations=self.iterations, learning_rate=self.learning_rate, lr_schedule=self.lr_schedule,
            milestones=self.milestones, use_lle=self.lle, log_every=self.log_every,
            weights=LossWeights(self.lambda1, self.lambda2, self.huber_delta))

    def arch_for(self, frame_shape):
        changes = {"frame_shape": tuple(frame_shape), "activation": self.activation}
        if not self.dropout:
            changes["dropout_after"] = ()
        return preset(self.preset, **changes)

    def rpm_for(self, n: int) -> RPM:
        return rpm_from_positions(resolve_positions(self.positions, n))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        clean = {k.replace("-", "_"): v for k, v in d.items()}
        unknown = set(clean) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**clean)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        if not isinstance(self.positions, str):
            d["positions"] = [float(p) for p in self.positions]
        return d


def resolve_positions(spec, n: int) -> list:
    """Synthesis positions for an ``n``-interval fit.

    ``spec`` is ``"halfway"``, ``"davis"``, ``"sub<K>"`` (K new frames per
    gap), or an explicit list of numbers / fraction strings.
    """
    if isinstance(spec, str):
        if spec == "halfway":
            return halfway_positions(n)
        if spec == "davis":
            return list(DAVIS_POSITIONS)
        if spec.startswith("sub"):
            return subdivision_positions(n, int(spec[3:]))
        spec = [p for p in spec.replace(",", " ").split() if p]
    return [float(Fraction(p)) if isinstance(p, str) else float(p) for p in spec]


@dataclass
class FrameMetrics:
    index: int
    position: float
    ssim: float
    psnr: float
    baseline_first: Optional[float] = None
    baseline_last: Optional[float] = None


@dataclass
class EvalReport:
    kind: str
    frames: list = field(default_factory=list)
    loss_initial: float = float("nan")
    loss_final: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0
    notes: dict = field(default_factory=dict)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([f.ssim for f in self.frames])) if self.frames else float("nan")

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([f.psnr for f in self.frames])) if self.frames else float("nan")

    def beats_repetition(self) -> bool:
        return all(f.ssim > max(f.baseline_first, f.baseline_last) for f in self.frames)

    def to_text(self) -> str:
        lines = [f"kind={self.kind}"]
        for k, v in self.notes.items():
            lines.append(f"{k}={v}")
        lines += [
            f"frames={len(self.frames)}",
            f"mean_ssim={self.mean_ssim:.6f}",
            f"mean_psnr={self.mean_psnr:.4f}",
            f"iterations={self.iterations}",
            f"loss_initial={self.loss_initial:.8g}",
            f"loss_final={self.loss_final:.8g}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "position", "ssim", "psnr", "baseline_first", "baseline_last"])
        for f in self.frames:
            w.writerow([f.index, f"{f.position:.6f}", f"{f.ssim:.6f}", f"{f.psnr:.4f}",
                        "" if f.baseline_first is None else f"{f.baseline_first:.6f}",
                        "" if f.baseline_last is None else f"{f.baseline_last:.6f}"])
        return buf.getvalue()


def trace_csv(trace: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace:
        w.writerow([int(row[0])] + [f"{v:.8g}" for v in row[1:]])
    return buf.getvalue()


def _fit_sequence(seq: FrameSequence, cfg: RunConfig):
    model = build_model(cfg.arch_for(seq.frame_shape), cfg.seed)
    try:
        result = fit(seq.frames, model, cfg.fit_config())
    except Exception as exc:
        raise PipelineError(f"fitting {seq.names[0]}..{seq.names[-1]} failed: {exc}") from exc
    return result


def _write_run(out: Path, frames: np.ndarray, report: EvalReport, result, cfg: RunConfig, refs: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_frames(frames, out / "frames")
    (out / "report.txt").write_text(report.to_text())
    (out / "metrics.csv").write_text(report.to_csv())
    (out / "loss_trace.csv").write_text(trace_csv(result.trace))
    (out / "timing.txt").write_text(f"wall_time_seconds={report.wall_time:.3f}\n")
    # the run directory itself is left out so identical runs give identical files
    config = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    save_checkpoint(out / "checkpoint.dlle", result.model, result.codes, {"config": config, "references": refs})


def run_interpolate(cfg: RunConfig, sequence: Optional[FrameSequence] = None):
    """Fit on every frame of the input as references and synthesize at ``cfg.positions``.

    Returns the synthesized frames (K, C, H, W) in [0, 1] and a report whose
    per-frame entries score the reconstructions of the references.
    """
    start = time.perf_counter()
    seq = sequence if sequence is not None else load_frames(cfg.input)
    rpm = cfg.rpm_for(seq.n)
    result = _fit_sequence(seq, cfg)
    frames = synthesize(result.model, result.codes, rpm)

    recon = synthesize(result.model, result.codes, fit_rpm(seq.n))
    refs = seq.unit()
    report = EvalReport("interpolate")
    for j in range(len(seq)):
        report.frames.append(FrameMetrics(j, j / seq.n, ssim_value(recon[j], refs[j]), psnr(recon[j], refs[j])))
    report.notes = {
        "references": len(seq),
        "positions": " ".join(f"{s:.6f}" for s in rpm.positions),
        "synthesized": len(frames),
        "metrics": "reconstruction of references",
    }
    report.iterations = cfg.iterations
    report.loss_initial, report.loss_final = float(result.trace[0, 1]), float(result.trace[-1, 1])
    report.wall_time = time.perf_counter() - start
    if cfg.output:
        _write_run(Path(cfg.output), frames, report, result, cfg, len(seq))
    return frames, report


def eval_leaveout(sequence: FrameSequence, cfg: RunConfig):
    """Hold out every other frame and score the interpolations against them.

    Frames at even 0-based indices are the references; the odd ones are the
    held-out truths, synthesized at ``s = (2j + 1) / (2N)``.
    """
    start = time.perf_counter()
    total = len(sequence)
    if total < 3 or total % 2 == 0:
        raise PipelineError(f"leave-out evaluation needs an odd frame count >= 3, got {total}")
    refs = sequence.subset(range(0, total, 2))
    held = list(range(1, total, 2))
    n = refs.n
    rpm = rpm_from_positions(halfway_positions(n))
    result = _fit_sequence(refs, cfg)
    frames = synthesize(result.model, result.codes, rpm)

    unit = sequence.unit()
    first, last = unit[0], unit[-1]
    report = EvalReport("leaveout")
    for k, idx in enumerate(held):
        truth = unit[idx]
        report.frames.append(FrameMetrics(
            idx, rpm.positions[k], ssim_value(frames[k], truth), psnr(frames[k], truth),
            ssim_value(first, truth), ssim_value(last, truth)))
    report.notes = {
        "references": " ".join(str(i) for i in range(0, total, 2)),
        "held_out": " ".join(str(i) for i in held),
        "index_base": 0,
        "positions": " ".join(f"{s:.6f}" for s in rpm.positions),
        "baseline": "frame repetition of the first / last node",
    }
    report.iterations = cfg.iterations
    report.loss_initial, report.loss_final = float(result.trace[0, 1]), float(result.trace[-1, 1])
    report.wall_time = time.perf_counter() - start
    if cfg.output:
        _write_run(Path(cfg.output), frames, report, result, cfg, len(refs))
    report.result = result
    report.synthesized = frames
    return report


def derived_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def _eval_job(args):
    seq, cfg = args
    report = eval_leaveout(seq, cfg)
    report.result = report.synthesized = None
    return report


def eval_many(sequences, cfg: RunConfig, workers: int = 1) -> list:
    """Leave-out evaluation of several sequences, each with its own derived seed."""
    jobs = []
    for i, seq in enumerate(sequences):
        d = cfg.to_dict()
        d["seed"] = derived_seed(cfg.seed, i)
        if cfg.output:
            d["output"] = str(Path(cfg.output) / f"seq_{i:03d}")
        jobs.append((seq, RunConfig.from_dict(d)))
    if workers <= 1:
        return [_eval_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_eval_job, jobs))
