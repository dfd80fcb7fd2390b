import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeplle.lle import (LLEError, embed, embedding_cost, find_neighbors, reconstruction_error, solve_weights,
                         weight_matrix)


def grid_objective(x, a, b, lo=-10.0, hi=11.0, step=1e-4):
    """Min of ||x - (w a + (1-w) b)||² over a 1-parameter grid on the affine line."""
    w = np.arange(lo, hi + step / 2, step)[:, None]
    r = x - (w * a + (1 - w) * b)
    obj = np.sum(r * r, axis=1)
    k = int(np.argmin(obj))
    assert 0 < k < len(w) - 1, "grid optimum on the boundary; widen the grid"
    return float(obj[k])


def random_normalized(rng, m, k):
    Y = rng.standard_normal((m, k))
    Y -= Y.mean(axis=0)
    q, _ = np.linalg.qr(Y)
    return q * np.sqrt(m)


def _rotation(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class TestNeighbors:
    def test_nearest_on_line(self):
        X = np.array([[0.0], [1.0], [10.0]])
        np.testing.assert_array_equal(find_neighbors(X, 0, 1), [1])

    def test_tie_prefers_smaller_index(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(find_neighbors(X, 0, 1), [1])
        np.testing.assert_array_equal(find_neighbors(X, 0, 3), [1, 2, 3])

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3))
        for i in range(50):
            d = [(float(np.sum((X[i] - X[j]) ** 2)), j) for j in range(50) if j != i]
            expect = [j for _, j in sorted(d)[:5]]
            np.testing.assert_array_equal(find_neighbors(X, i, 5), expect)

    @pytest.mark.parametrize("k", [0, 3])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            find_neighbors(np.zeros((3, 2)), 0, k)


class TestWeights:
    def test_midpoint(self):
        X = np.array([[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])
        np.testing.assert_allclose(solve_weights(X, 0, [1, 2]), [0.5, 0.5], atol=1e-8)

    @pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
    def test_affine_span_residual(self):
        rng = np.random.default_rng(1)
        nb = rng.standard_normal((3, 5))
        x = np.array([0.2, 0.5, 0.3]) @ nb
        X = np.vstack([x, nb])
        w = solve_weights(X, 0, [1, 2, 3], reg=0.0)
        assert np.linalg.norm(x - w @ nb) < 1e-8

    @pytest.mark.parametrize("seed", range(20))
    def test_grid_oracle(self, seed):
        # two neighbors in 2-D give a nonsingular Gram matrix, so the plain objective applies
        X = np.random.default_rng(seed).standard_normal((3, 2))
        w = solve_weights(X, 0, [1, 2], reg=0.0)
        ours = float(np.sum((X[0] - w @ X[1:]) ** 2))
        assert abs(ours - grid_objective(X[0], X[1], X[2])) < 1e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_oracle_regularized(self, seed):
        # with the default reg the solver minimizes residual + reg * tr(C) * |w|²
        X = np.random.default_rng(seed).standard_normal((3, 2))
        reg = 1e-3
        w = solve_weights(X, 0, [1, 2], reg=reg)
        D = X[0] - X[1:]
        lam = reg * np.trace(D @ D.T)
        g = np.arange(-10, 11, 1e-4)
        pts = np.outer(g, X[1]) + np.outer(1 - g, X[2])
        obj = np.sum((X[0] - pts) ** 2, axis=1) + lam * (g ** 2 + (1 - g) ** 2)
        ours = float(np.sum((X[0] - w @ X[1:]) ** 2) + lam * np.sum(w ** 2))
        assert abs(ours - obj.min()) < 1e-3

    def test_rows_sum_to_one(self):
        X = np.random.default_rng(2).standard_normal((30, 4))
        W, hoods = weight_matrix(X, 6)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-10)
        for i, nb in enumerate(hoods):
            mask = np.ones(30, bool)
            mask[nb] = False
            assert np.all(W[i, mask] == 0)

    def test_singular_without_reg(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(LLEError):
            solve_weights(X, 0, [1, 2], reg=0.0)

    def test_regularization_handles_excess_neighbors(self):
        X = np.random.default_rng(3).standard_normal((8, 2))
        w = solve_weights(X, 0, [1, 2, 3, 4, 5])
        assert w.sum() == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 16), st.floats(0.1, 10.0))
    def test_similarity_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((6, 3))
        nb = [1, 2, 3, 4]
        w = solve_weights(X, 0, nb)
        Xt = scale * X @ _rotation(rng, 3) + rng.standard_normal(3)
        np.testing.assert_allclose(solve_weights(Xt, 0, nb), w, atol=1e-8)


class TestEmbed:
    def test_normalization(self):
        X = np.random.default_rng(4).standard_normal((20, 3))
        W, _ = weight_matrix(X, 5)
        Y = embed(W, 2)
        np.testing.assert_allclose(Y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(Y.T @ Y / 20, np.eye(2), atol=1e-8)

    def test_exact_weights_zero_objective(self):
        # evenly spaced points on a line: interior points are neighbor midpoints,
        # the ends are affine extrapolations of their two inner neighbors
        m = 9
        X = np.linspace(0, 1, m)[:, None] * np.array([[1.0, 2.0, -1.0]])
        W = np.zeros((m, m))
        for i in range(1, m - 1):
            W[i, [i - 1, i + 1]] = 0.5
        W[0, [1, 2]] = [2.0, -1.0]
        W[-1, [-2, -3]] = [2.0, -1.0]
        assert reconstruction_error(X, W) < 1e-8
        assert embedding_cost(embed(W, 1), W) < 1e-8

    @pytest.mark.parametrize("seed", range(5))
    def test_beats_random_candidates(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((15, 4))
        W, _ = weight_matrix(X, 4)
        best = embedding_cost(embed(W, 2), W)
        for _ in range(100):
            assert best <= embedding_cost(random_normalized(rng, 15, 2), W) + 1e-12

    def test_objective_invariant_under_rotation(self):
        rng = np.random.default_rng(6)
        W, _ = weight_matrix(rng.standard_normal((12, 3)), 4)
        Y = embed(W, 2)
        assert embedding_cost(Y @ _rotation(rng, 2), W) == pytest.approx(embedding_cost(Y, W), rel=1e-9)

    def test_line_ordering(self):
        rng = np.random.default_rng(7)
        t = np.sort(rng.uniform(0, 1, 10))
        direction = rng.standard_normal(5)
        X = np.outer(t, direction) + rng.standard_normal(5)
        W, _ = weight_matrix(X, 2)
        y = embed(W, 1)[:, 0]
        d = np.diff(y)
        assert np.all(d > 0) or np.all(d < 0)

    def test_dimension_out_of_range(self):
        with pytest.raises(ValueError):
            embed(np.zeros((3, 3)), 3)
