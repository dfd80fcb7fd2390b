import json

import numpy as np
import pytest

from deeplle import cli
from deeplle.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from deeplle.frames import load_frames
from deeplle.model import build_model, preset, synthesize, rpm_from_positions
from deeplle.pipeline import (DAVIS_POSITIONS, PipelineError, RunConfig, derived_seed, eval_leaveout, eval_many,
                              resolve_positions, run_interpolate)
from deeplle.synthetic import gen_synthetic

QUICK = dict(preset="desk32", iterations=4, learning_rate=1e-3)


@pytest.fixture(scope="module")
def seq3():
    return gen_synthetic("translating_square", None, 3, 16, 0)


@pytest.fixture(scope="module")
def seq5():
    return gen_synthetic("translating_square", None, 5, 16, 0)


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.iterations, cfg.learning_rate, cfg.lr_schedule, cfg.milestones) == (5000, 1e-4, False, (2500, 3750))

    def test_milestones_below_iterations(self):
        with pytest.raises(ValueError):
            RunConfig(iterations=3000, lr_schedule=True)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    def test_dash_keys(self):
        assert RunConfig.from_dict({"learning-rate": 0.5}).learning_rate == 0.5

    def test_positions(self):
        assert resolve_positions("halfway", 2) == [0.25, 0.75]
        assert resolve_positions("davis", 2) == list(DAVIS_POSITIONS)
        assert resolve_positions("1/3, 2/3", 2) == pytest.approx([1 / 3, 2 / 3])
        assert resolve_positions("sub1", 2) == [0.25, 0.75]

    def test_no_dropout_arch(self):
        assert RunConfig(dropout=False).arch_for((3, 32, 32)).dropout_after == ()


class TestInterpolate:
    def test_halfway_emits_two(self, seq3, tmp_path):
        frames, report = run_interpolate(RunConfig(output=str(tmp_path), **QUICK), seq3)
        assert frames.shape == (2, 3, 16, 16)
        for name in ("frames", "report.txt", "metrics.csv", "checkpoint.dlle", "loss_trace.csv"):
            assert (tmp_path / name).exists()
        assert len(list((tmp_path / "frames").glob("frame_*.png"))) == 2
        trace = (tmp_path / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,total,huber,grad,ssim,lr"
        assert len(trace) == 5

    def test_davis_emits_six(self, seq3):
        frames, _ = run_interpolate(RunConfig(positions="davis", **QUICK), seq3)
        assert len(frames) == 6

    def test_byte_identical(self, seq3, tmp_path):
        for d in ("a", "b"):
            run_interpolate(RunConfig(output=str(tmp_path / d), seed=3, **QUICK), seq3)
        for rel in ("frames/frame_0000.png", "frames/frame_0001.png", "report.txt", "metrics.csv",
                    "loss_trace.csv", "checkpoint.dlle"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_error_context(self, seq3):
        cfg = RunConfig(preset="desk32", iterations=2)
        bad = gen_synthetic("translating_square", None, 3, 12, 0)
        with pytest.raises(ValueError):
            run_interpolate(cfg, bad)


class TestLeaveout:
    def test_two_comparisons(self, seq5, tmp_path):
        report = eval_leaveout(seq5, RunConfig(output=str(tmp_path), **QUICK))
        assert [f.index for f in report.frames] == [1, 3]
        assert [f.position for f in report.frames] == [0.25, 0.75]
        text = (tmp_path / "report.txt").read_text()
        assert "held_out=1 3" in text and "index_base=0" in text

    def test_aggregate_is_mean(self, seq5):
        report = eval_leaveout(seq5, RunConfig(**QUICK))
        assert report.mean_ssim == pytest.approx(np.mean([f.ssim for f in report.frames]))
        assert report.mean_psnr == pytest.approx(np.mean([f.psnr for f in report.frames]))
        lines = dict(line.split("=", 1) for line in report.to_text().splitlines())
        assert float(lines["mean_ssim"]) == pytest.approx(report.mean_ssim, abs=1e-6)

    def test_baselines_are_node_repetition(self, seq5):
        from deeplle.quality import ssim_value
        report = eval_leaveout(seq5, RunConfig(**QUICK))
        u = seq5.unit()
        assert report.frames[0].baseline_first == pytest.approx(ssim_value(u[0], u[1]))
        assert report.frames[1].baseline_last == pytest.approx(ssim_value(u[4], u[3]))

    def test_even_count_rejected(self):
        with pytest.raises(PipelineError, match="odd"):
            eval_leaveout(gen_synthetic("translating_square", None, 4, 16, 0), RunConfig(**QUICK))

    def test_many_with_derived_seeds(self, seq5):
        reports = eval_many([seq5, seq5], RunConfig(iterations=2, **{k: v for k, v in QUICK.items()
                                                                      if k != "iterations"}))
        assert len(reports) == 2
        assert reports[0].mean_ssim != reports[1].mean_ssim

    def test_derived_seed(self):
        assert derived_seed(0, 1) == derived_seed(0, 1)
        assert len({derived_seed(0, i) for i in range(10)}) == 10


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = build_model(preset("desk32"), 4)
        codes = np.random.default_rng(0).standard_normal((2, model.arch.latent_dim)).astype(np.float32)
        save_checkpoint(tmp_path / "m.dlle", model, codes, {"references": 3})
        back, codes2, meta = load_checkpoint(tmp_path / "m.dlle")
        np.testing.assert_array_equal(codes2, codes)
        assert meta == {"references": 3}
        rpm = rpm_from_positions([0.3])
        np.testing.assert_array_equal(synthesize(back, codes2, rpm), synthesize(model, codes, rpm))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.dlle").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "x.dlle")

    def test_truncated(self, tmp_path):
        save_checkpoint(tmp_path / "m.dlle", build_model(preset("desk32"), 0))
        raw = (tmp_path / "m.dlle").read_bytes()
        (tmp_path / "m.dlle").write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "m.dlle")


class TestCli:
    def test_gen_fit_synthesize_eval(self, tmp_path, capsys):
        assert cli.main(["gen", "--kind", "translating_square", "--count", "5", "--size", "16",
                         "--output", str(tmp_path / "seq")]) == 0
        assert len(load_frames(tmp_path / "seq")) == 5

        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"preset": "desk32", "iterations": 50, "learning-rate": 1e-3}))
        run = tmp_path / "run"
        assert cli.main(["fit", "--config", str(cfg), "--iterations", "3", "--input", str(tmp_path / "seq"),
                         "--output", str(run)]) == 0
        assert "iterations=3" in (run / "report.txt").read_text()
        assert len(list((run / "frames").iterdir())) == 4

        assert cli.main(["synthesize", "--checkpoint", str(run / "checkpoint.dlle"), "--positions", "davis",
                         "--output", str(tmp_path / "syn")]) == 0
        assert len(list((tmp_path / "syn").iterdir())) == 6

        assert cli.main(["eval", "--config", str(cfg), "--iterations", "2", "--input", str(tmp_path / "seq")]) == 0
        out = capsys.readouterr().out
        assert "held_out=1 3" in out

    def test_missing_input_fails(self, tmp_path, capsys):
        assert cli.main(["fit", "--input", str(tmp_path / "none"), "--output", str(tmp_path / "o")]) != 0
        assert "error" in capsys.readouterr().err

    def test_even_sequence_fails(self, tmp_path):
        cli.main(["gen", "--kind", "two_squares", "--count", "4", "--size", "16", "--output", str(tmp_path / "s")])
        assert cli.main(["eval", "--input", str(tmp_path / "s"), "--iterations", "1", "--preset", "desk32"]) == 1

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert cli.main(["gen", "--config", str(tmp_path / "c.json")]) == 1

    def test_bad_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "zero")
        assert cli.main(["gen", "--kind", "two_squares", "--output", str(tmp_path)]) == 1

    def test_motion_too_large(self, tmp_path):
        assert cli.main(["gen", "--kind", "translating_square", "--size", "16", "--velocity", "9", "0",
                         "--output", str(tmp_path)]) == 1
