import numpy as np
import pytest

from demfuse.variational import (
    DEFAULT_STEP,
    GRAD_NORM_SQ_BOUND,
    divergence,
    gradient,
    operator_norm_sq,
)


class TestGradient:
    def test_constant_grid_has_zero_gradient(self):
        assert np.all(gradient(np.full((5, 7), 3.3)) == 0.0)

    def test_row_forward_differences(self):
        g = gradient(np.array([[0.0, 1.0, 3.0]]))
        assert list(g[0, :, 0]) == [1.0, 2.0, 0.0]
        assert np.all(g[..., 1] == 0.0)

    def test_column_differences(self):
        g = gradient(np.array([[0.0], [2.0], [5.0]]))
        assert list(g[:, 0, 1]) == [2.0, 3.0, 0.0]

    def test_masked_differences_zeroed(self):
        u = np.array([[0.0, 1.0, 3.0]])
        valid = np.array([[True, False, True]])
        g = gradient(u, valid)
        assert list(g[0, :, 0]) == [0.0, 0.0, 0.0]


class TestAdjointIdentity:
    @pytest.mark.parametrize("shape", [(3, 3), (17, 5), (64, 64), (256, 256)])
    def test_random_pairs(self, shape, rng):
        for _ in range(5):
            u = rng.standard_normal(shape)
            p = rng.standard_normal(shape + (2,))
            lhs = float(np.sum(gradient(u) * p))
            rhs = float(np.sum(u * divergence(p)))
            denom = np.linalg.norm(u) * np.linalg.norm(p)
            assert abs(lhs + rhs) / denom < 1e-10

    def test_masked_pairs(self, rng):
        u = rng.standard_normal((40, 33))
        p = rng.standard_normal((40, 33, 2))
        valid = rng.random((40, 33)) > 0.3
        lhs = float(np.sum(gradient(u, valid) * p))
        rhs = float(np.sum(u * divergence(p, valid)))
        assert abs(lhs + rhs) / (np.linalg.norm(u) * np.linalg.norm(p)) < 1e-10


class TestDivergence:
    def test_zero_field(self):
        assert np.all(divergence(np.zeros((4, 4, 2))) == 0.0)

    def test_div_grad_constant_is_zero(self):
        assert np.all(divergence(gradient(np.full((6, 6), 2.0))) == 0.0)


class TestOperatorNorm:
    def test_within_known_bound(self):
        est = operator_norm_sq((64, 64))
        assert 7.0 <= est < GRAD_NORM_SQ_BOUND

    @pytest.mark.parametrize("shape", [(8, 8), (31, 17), (128, 128)])
    def test_below_bound_on_all_sizes(self, shape):
        assert operator_norm_sq(shape) < GRAD_NORM_SQ_BOUND

    def test_default_steps_satisfy_stability_product(self):
        assert DEFAULT_STEP * DEFAULT_STEP * GRAD_NORM_SQ_BOUND <= 1.0 + 1e-12
