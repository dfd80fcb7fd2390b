"""Command-line entry point: ``deeplle {fit,synthesize,eval,gen}``.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are
the long flag names (dashes or underscores). Flags given on the command line
override values from the file.

The BLAS/LAPACK thread count comes from ``DEEPLLE_THREADS`` (default 1, which
keeps runs bit-reproducible).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint
from .frames import FrameError, load_frames, save_frames
from .model import FitError, rpm_from_positions, synthesize
from .pipeline import PipelineError, RunConfig, eval_leaveout, eval_many, resolve_positions, run_interpolate
from .synthetic import KINDS, gen_synthetic

log = logging.getLogger("deeplle")

THREADS_ENV = "DEEPLLE_THREADS"
_ERRORS = (FrameError, FitError, PipelineError, CheckpointError, ValueError, OSError)


def _bool(text: str) -> bool:
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _run_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so we can tell which flags were actually given
    p.add_argument("--preset", help="architecture preset (desk64, desk32, ucf, davis)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lr-schedule", type=_bool, metavar="BOOL", help="halve the LR at each milestone")
    p.add_argument("--milestones", type=int, nargs="+")
    p.add_argument("--lambda1", type=float, help="gradient-loss weight")
    p.add_argument("--lambda2", type=float, help="SSIM weight")
    p.add_argument("--huber-delta", type=float)
    p.add_argument("--activation", choices=("lrelu", "relu", "elu", "selu"))
    p.add_argument("--dropout", type=_bool, metavar="BOOL")
    p.add_argument("--lle", type=_bool, metavar="BOOL", help="encode only the nodes (default true)")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deeplle", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to reference frames and synthesize in-betweens")
    fit.add_argument("--config")
    fit.add_argument("--input", help="frame directory, glob, or list file")
    fit.add_argument("--output", help="run directory")
    fit.add_argument("--positions", help='"halfway", "davis", "subK" or e.g. "1/4 3/4"')
    _run_flags(fit)

    syn = sub.add_parser("synthesize", help="decode frames from a saved checkpoint")
    syn.add_argument("--config")
    syn.add_argument("--checkpoint")
    syn.add_argument("--output")
    syn.add_argument("--positions")

    ev = sub.add_parser("eval", help="leave-out evaluation on an odd-length sequence")
    ev.add_argument("--config")
    ev.add_argument("--input", nargs="+", help="one frame directory/glob per sequence")
    ev.add_argument("--output")
    ev.add_argument("--workers", type=int)
    _run_flags(ev)

    gen = sub.add_parser("gen", help="render a synthetic sequence")
    gen.add_argument("--config")
    gen.add_argument("--kind", choices=KINDS)
    gen.add_argument("--count", type=int)
    gen.add_argument("--size", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--velocity", type=float, nargs=2)
    gen.add_argument("--output")
    return parser


def _merge(args: argparse.Namespace) -> dict:
    """Config-file values overlaid with explicitly given flags."""
    values = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError(f"config {args.config} must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if k in ("config", "command", "verbose") or v is None:
            continue
        values[k] = v
    return values


def _require(values: dict, *keys) -> None:
    missing = [k for k in keys if values.get(k) is None]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _set_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1")
    return n


def cmd_fit(values: dict) -> int:
    _require(values, "input", "output")
    frames, report = run_interpolate(RunConfig.from_dict(values))
    print(report.to_text(), end="")
    log.info("wrote %d frames to %s", len(frames), values["output"])
    return 0


def cmd_synthesize(values: dict) -> int:
    _require(values, "checkpoint", "output")
    model, codes, meta = load_checkpoint(values["checkpoint"])
    if codes is None:
        raise CheckpointError(f"{values['checkpoint']}: no node codes stored")
    positions = values.get("positions") or meta.get("config", {}).get("positions", "halfway")
    n = int(meta.get("references", 3)) - 1
    frames = synthesize(model, codes, rpm_from_positions(resolve_positions(positions, n)))
    paths = save_frames(frames, values["output"])
    print(f"synthesized={len(paths)}")
    return 0


def cmd_eval(values: dict) -> int:
    _require(values, "input")
    inputs = values.pop("input")
    if isinstance(inputs, str):
        inputs = [inputs]
    workers = int(values.pop("workers", 1) or 1)
    cfg = RunConfig.from_dict(values)
    sequences = [load_frames(p) for p in inputs]
    if len(sequences) == 1:
        reports = [eval_leaveout(sequences[0], cfg)]
    else:
        reports = eval_many(sequences, cfg, workers)
    for path, rep in zip(inputs, reports):
        print(f"# {path}")
        print(rep.to_text(), end="")
        print(rep.to_csv(), end="")
    return 0


def cmd_gen(values: dict) -> int:
    _require(values, "kind", "output")
    params = {}
    if values.get("velocity") is not None:
        params["velocity"] = tuple(values["velocity"])
    seq = gen_synthetic(values["kind"], params, int(values.get("count", 3)), int(values.get("size", 64)),
                        int(values.get("seed", 0)))
    paths = save_frames(seq.unit(), values["output"])
    print(f"frames={len(paths)}")
    return 0


COMMANDS = {"fit": cmd_fit, "synthesize": cmd_synthesize, "eval": cmd_eval, "gen": cmd_gen}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _set_threads()
        values = _merge(args)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](values)
    except _ERRORS as exc:
        print(f"deeplle {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
