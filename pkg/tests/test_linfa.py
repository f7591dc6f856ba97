import math

import numpy as np
import pytest

from regq.envs import STATE_BOX, gridworld_stream
from regq.errors import DegenerateFeatures, InsufficientSamples, InvalidArgument
from regq.linfa import (
    ProjectionContext,
    build_gridpoly_features,
    build_rbf_features,
    estimate_sigma,
    exact_sigma,
    onehot_features,
    table_features,
)
from regq.mdp import lower_grad, lower_objective, random_mdp
from regq.regularizer import SHANNON, Regularizer, SmoothTruncation


class TestFeatureModels:
    def test_onehot_is_standard_basis(self):
        f = onehot_features(4, 3)
        assert f.d == 12
        np.testing.assert_array_equal(f.matrix(), np.eye(12))
        np.testing.assert_array_equal(f(2, 1), np.eye(12)[7])

    def test_gridpoly_dimension(self):
        assert build_gridpoly_features(5, 5, 5).d == 30

    def test_gridpoly_block_structure(self, grid_poly):
        for s in range(25):
            for a in range(5):
                nz = np.flatnonzero(grid_poly(s, a))
                assert nz.size > 0
                assert set(nz // 6) == {a}

    def test_gridpoly_normalized(self, grid_poly):
        norms = np.linalg.norm(grid_poly.matrix(), axis=1)
        assert norms.max() == pytest.approx(1.0, abs=1e-15)

    def test_gridpoly_monomials(self, grid_poly):
        # the bottom-right cell has x = y = 1: every monomial equals 1 before scaling
        block = grid_poly(24, 0)[:6]
        np.testing.assert_allclose(block, np.full(6, 1 / math.sqrt(6)), atol=1e-15)
        # the top-left cell keeps only the constant term
        np.testing.assert_allclose(grid_poly(0, 2)[12:18], [1 / math.sqrt(6), 0, 0, 0, 0, 0], atol=1e-15)

    def test_rbf_dimension(self):
        assert build_rbf_features(10, 1.0, 3, STATE_BOX, seed=0).d == 30

    def test_rbf_at_center(self):
        f = build_rbf_features(5, 0.3, 3, STATE_BOX, seed=1)
        low, high = np.array(STATE_BOX[0]), np.array(STATE_BOX[1])
        state = low + f.rbf_centers[2] * (high - low)
        assert f.kernels(state)[2] == pytest.approx(1.0, abs=1e-12)

    def test_rbf_blocks(self):
        f = build_rbf_features(4, 0.5, 3, STATE_BOX, seed=2)
        m = f.all_actions([-0.5, 0.0])
        for a in range(3):
            assert set(np.flatnonzero(m[a]) // 4) == {a}
            np.testing.assert_array_equal(m[a, 4 * a:4 * a + 4], m[0, :4])

    def test_rbf_deterministic(self):
        f1 = build_rbf_features(20, 1.0, 3, STATE_BOX, seed=7)
        f2 = build_rbf_features(20, 1.0, 3, STATE_BOX, seed=7)
        np.testing.assert_array_equal(f1.rbf_centers, f2.rbf_centers)
        s = [0.1, 0.01]
        assert f1.all_actions(s).tobytes() == f2.all_actions(s).tobytes()

    def test_rbf_norm_bound(self):
        rng = np.random.default_rng(0)
        low, high = np.array(STATE_BOX[0]), np.array(STATE_BOX[1])
        for width in (0.05, 1.0, 5.0):
            f = build_rbf_features(20, width, 3, STATE_BOX, seed=3)
            for s in rng.uniform(low, high, size=(3400, 2)):
                assert np.linalg.norm(f.all_actions(s), axis=1).max() <= 1 + 1e-12

    def test_table_normalizes(self):
        rng = np.random.default_rng(1)
        f = table_features(rng.normal(scale=5, size=(10, 3, 4)))
        assert np.linalg.norm(f.matrix(), axis=1).max() <= 1 + 1e-12

    def test_table_rejects_long_vectors(self):
        with pytest.raises(InvalidArgument):
            table_features(np.full((2, 2, 2), 3.0), normalize=False)

    def test_invalid_rbf(self):
        with pytest.raises(InvalidArgument):
            build_rbf_features(0, 1.0, 3, STATE_BOX, 0)
        with pytest.raises(InvalidArgument):
            build_rbf_features(3, 0.0, 3, STATE_BOX, 0)


class TestExactSigma:
    def test_onehot_gridworld(self, grid_onehot_ctx):
        np.testing.assert_allclose(grid_onehot_ctx.sigma, np.eye(125) / 125, atol=1e-14)
        assert grid_onehot_ctx.lambda_g == pytest.approx(1 / 125, abs=1e-14)

    def test_symmetric_and_trace(self, small_ctx):
        assert np.max(np.abs(small_ctx.sigma - small_ctx.sigma.T)) <= 1e-14
        assert np.trace(small_ctx.sigma) <= 1 + 1e-12

    def test_lambda_is_lower_bound(self, grid_poly_ctx):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(100, grid_poly_ctx.d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        quad = np.einsum("ni,ij,nj->n", v, grid_poly_ctx.sigma, v)
        assert np.all(quad >= grid_poly_ctx.lambda_g - 1e-10)

    def test_solve(self, small_ctx):
        b = np.arange(small_ctx.d, dtype=float)
        np.testing.assert_allclose(small_ctx.sigma @ small_ctx.solve(b), b, atol=1e-12 * np.linalg.norm(b) / small_ctx.lambda_g)

    def test_degenerate(self):
        mdp = random_mdp(3, 2, 0.9, seed=0)
        table = np.zeros((3, 2, 2))
        table[..., 0] = 0.5  # second coordinate never excited
        with pytest.raises(DegenerateFeatures):
            exact_sigma(table_features(table), mdp)

    def test_context_rejects_bad_lambda(self):
        with pytest.raises(InvalidArgument):
            ProjectionContext(np.eye(2), 0.0)

    def test_radius(self):
        ctx = ProjectionContext(np.eye(2) * 0.5, 0.5)
        assert ctx.radius(1.0, 0.9, 10.0) == pytest.approx(20.0)


class TestEstimateSigma:
    def test_converges_to_exact(self, grid, grid_poly, grid_poly_ctx):
        n = 200_000
        samples = ((t.state, t.action) for t in gridworld_stream(grid, seed=4))
        est = estimate_sigma(grid_poly, samples, n)
        assert est.source == "estimated" and est.sample_count == n
        assert np.max(np.abs(est.sigma - grid_poly_ctx.sigma)) <= 3 / math.sqrt(n)

    def test_duplicates_hit_floor(self):
        f = onehot_features(3, 2)
        ctx = estimate_sigma(f, iter([(0, 0)] * 6), 6, floor=1e-3)
        assert ctx.lambda_g == 1e-3

    def test_floor_is_lower_bound(self, grid, grid_poly):
        samples = ((t.state, t.action) for t in gridworld_stream(grid, seed=5))
        assert estimate_sigma(grid_poly, samples, 500, floor=1e-3).lambda_g >= 1e-3

    def test_insufficient(self, grid_poly):
        with pytest.raises(InsufficientSamples):
            estimate_sigma(grid_poly, iter([(0, 0)] * 100), 10)
        with pytest.raises(InsufficientSamples):
            estimate_sigma(grid_poly, iter([(0, 0)] * 40), 50)


class TestStrongConvexity:
    def test_lower_level(self, grid_mdp, grid_poly, grid_poly_ctx):
        reg, tr = Regularizer(SHANNON, 1.0, 5), SmoothTruncation(10.0)
        rng = np.random.default_rng(6)
        lam = grid_poly_ctx.lambda_g
        for _ in range(50):
            theta, w1, w2 = rng.normal(scale=5, size=(3, grid_poly.d))
            g1 = lower_objective(grid_mdp, reg, tr, grid_poly, theta, w1)
            g2 = lower_objective(grid_mdp, reg, tr, grid_poly, theta, w2)
            grad2 = lower_grad(grid_mdp, reg, tr, grid_poly, theta, w2)
            assert g1 >= g2 + grad2 @ (w1 - w2) + 0.5 * lam * np.sum((w1 - w2) ** 2) - 1e-10
