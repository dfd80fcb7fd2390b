from fractions import Fraction

import numpy as np
import pytest

from deeplle.engine import FIT, INFERENCE, Graph, Tensor
from deeplle.engine.gradcheck import check_gradients
from deeplle.model import (PRESETS, RPM, ArchConfig, DecoderBlock, EncoderBlock, FitConfig, FitError, build_model,
                           decode, encode, encode_nodes, fit, fit_rpm, halfway_positions, interpolate_latent,
                           preset, rpm_from_positions, subdivision_positions, synthesize)

TINY = ArchConfig(frame_shape=(3, 16, 16), encoder=(EncoderBlock(4, 2),), decoder=(DecoderBlock(1, 2, 2),),
                  kernel_size=3, encoder_kernel=3, dropout_after=(1,))


def collinearity_residual(codes, latent):
    """Largest orthogonal distance of ``latent`` rows from the line through the two codes, relative."""
    z0, z1 = codes
    d = z1 - z0
    t = (latent - z0) @ d / (d @ d)
    resid = latent - z0 - np.outer(t, d)
    return float(np.max(np.linalg.norm(resid, axis=1)) / max(np.linalg.norm(z0), np.linalg.norm(z1)))


class TestRPM:
    def test_fit_rpm_two(self):
        np.testing.assert_array_equal(fit_rpm(2).matrix, [[1, 0], [0.5, 0.5], [0, 1]])

    def test_halfway_two(self):
        np.testing.assert_allclose(rpm_from_positions(halfway_positions(2)).matrix, [[0.75, 0.25], [0.25, 0.75]])

    def test_halfway_general(self):
        assert halfway_positions(3) == pytest.approx([1 / 6, 1 / 2, 5 / 6])

    def test_davis_matrix(self):
        rpm = rpm_from_positions(["1/6", "1/4", "1/3", "2/3", "3/4", "5/6"])
        expect = [[5 / 6, 1 / 6], [3 / 4, 1 / 4], [2 / 3, 1 / 3], [1 / 3, 2 / 3], [1 / 4, 3 / 4], [1 / 6, 5 / 6]]
        np.testing.assert_allclose(rpm.matrix, expect, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 7, 10])
    def test_rows_sum_to_one(self, n):
        for rpm in (fit_rpm(n), rpm_from_positions(halfway_positions(n)),
                    rpm_from_positions(subdivision_positions(n, 3))):
            assert np.max(np.abs(rpm.matrix.sum(axis=1) - 1)) <= 1e-12

    def test_subdivision(self):
        assert subdivision_positions(1, 3) == pytest.approx([0.25, 0.5, 0.75])

    def test_fraction_strings(self):
        assert rpm_from_positions(["1/3"]).positions[0] == float(Fraction(1, 3))

    @pytest.mark.parametrize("bad", [[-0.1], [1.5], [float("nan")], []])
    def test_invalid_positions(self, bad):
        with pytest.raises(ValueError):
            RPM(tuple(bad))

    def test_zero_intervals(self):
        with pytest.raises(ValueError):
            fit_rpm(0)


class TestArch:
    def test_default_latent(self):
        assert ArchConfig().latent_shape == (64, 4, 4)

    def test_param_count_by_hand(self):
        # enc: conv1 4*3*9+4, conv2 4*4*9+4, proj 4*3+4; dec: 2*4*9+2; out 3*2*9+3
        assert build_model(TINY, 0).num_parameters() == 112 + 148 + 16 + 74 + 57

    def test_presets_validate(self):
        for arch in PRESETS.values():
            arch.validate()

    def test_bad_bookkeeping(self):
        with pytest.raises(ValueError):
            ArchConfig(frame_shape=(3, 50, 64))

    def test_round_trip_dict(self):
        arch = preset("desk32", activation="elu")
        assert ArchConfig.from_dict(arch.to_dict()) == arch

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            preset("huge")


class TestForward:
    def test_shapes(self):
        model = build_model(preset("desk32"), 0)
        x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32)
        z = encode_nodes(x, model)
        assert z.shape == (2, model.arch.latent_dim)
        y = decode(interpolate_latent(fit_rpm(4), z), model, INFERENCE)
        assert y.shape == (5, 3, 32, 32)
        assert y.data.min() >= 0 and y.data.max() <= 1

    def test_wrong_frame_shape(self):
        with pytest.raises(ValueError):
            encode(np.zeros((1, 3, 8, 8)), build_model(TINY, 0))

    def test_encode_nodes_needs_two(self):
        with pytest.raises(ValueError):
            encode_nodes(np.zeros((3, 3, 16, 16)), build_model(TINY, 0))

    def test_inference_ignores_dropout(self):
        model = build_model(TINY, 0)
        z = np.random.default_rng(1).standard_normal((2, TINY.latent_dim)).astype(np.float32)
        a = decode(z, model, INFERENCE).data
        b = decode(z, model, INFERENCE).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(decode(z, model, FIT).data, a)

    def test_model_gradients(self):
        # end-to-end encode/mix/decode gradient at float64 against finite differences
        model = build_model(TINY.replace(dropout_after=()), 3)
        for k, p in model.params.items():
            model.params[k] = p.astype(np.float64)
        x = np.random.default_rng(2).uniform(-1, 1, (2, 3, 16, 16))
        w = model.params["dec.out.w"]

        def fn(t):
            model.params["dec.out.w"] = t
            out = decode(interpolate_latent(fit_rpm(2), encode(x, model)), model, INFERENCE)
            return (out * out).sum()

        assert check_gradients(fn, [w.data]) < 1e-3
        model.params["dec.out.w"] = w

    def test_init_determinism(self):
        a, b = build_model(TINY, 11), build_model(TINY, 11)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
        c = build_model(TINY, 12)
        assert not np.array_equal(a.params["enc.0.conv1.w"].data, c.params["enc.0.conv1.w"].data)


@pytest.fixture(scope="module")
def fitted():
    frames = np.random.default_rng(0).uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)
    model = build_model(TINY, 5)
    return frames, fit(frames, model, FitConfig(iterations=30, learning_rate=1e-3))


class TestFit:
    def test_trace(self, fitted):
        _, res = fitted
        assert res.trace.shape == (30, 6)
        np.testing.assert_array_equal(res.trace[:, 0], np.arange(30))
        assert res.losses[-1] < res.losses[0]

    def test_collinear_codes(self, fitted):
        _, res = fitted
        latent = interpolate_latent(rpm_from_positions([0.1, 0.25, 0.5, 0.9]), Tensor(res.codes)).data
        assert collinearity_residual(res.codes, latent) < 1e-5

    def test_determinism(self, fitted):
        frames, res = fitted
        again = fit(frames, build_model(TINY, 5), FitConfig(iterations=30, learning_rate=1e-3))
        np.testing.assert_array_equal(again.trace, res.trace)
        rpm = rpm_from_positions([0.25, 0.75])
        np.testing.assert_array_equal(synthesize(again.model, again.codes, rpm),
                                      synthesize(res.model, res.codes, rpm))

    def test_schedule(self):
        frames = np.zeros((3, 3, 16, 16), np.float32)
        cfg = FitConfig(iterations=8, learning_rate=0.01, lr_schedule=True, milestones=(4, 6))
        res = fit(frames, build_model(TINY, 0), cfg)
        np.testing.assert_allclose(res.trace[:, 5], [0.01] * 4 + [0.005] * 2 + [0.0025] * 2)

    def test_bad_milestones(self):
        with pytest.raises(ValueError):
            FitConfig(iterations=100, lr_schedule=True, milestones=(50, 100))

    def test_no_lle_runs(self):
        frames = np.random.default_rng(1).uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)
        res = fit(frames, build_model(TINY, 0), FitConfig(iterations=3, use_lle=False))
        assert res.codes.shape == (2, TINY.latent_dim)

    def test_non_finite_loss(self):
        frames = np.zeros((3, 3, 16, 16), np.float32)
        frames[0, 0, 0, 0] = np.nan
        with pytest.raises(FitError, match="iteration 0"):
            fit(frames, build_model(TINY, 0), FitConfig(iterations=2))

    def test_single_graph_per_iteration(self):
        # a fresh graph each step: nothing leaks into an enclosing one
        frames = np.zeros((2, 3, 16, 16), np.float32)
        with Graph() as outer:
            fit(frames, build_model(TINY, 0), FitConfig(iterations=1))
        assert outer.nodes == []
