import numpy as np
import pytest

from augcluster import numerics as nx
from augcluster.errors import ConfigurationError, DimensionError, NumericError


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2], [3, 4]])
        np.testing.assert_array_equal(nx.matmul(np.eye(2), a), a)

    def test_hand_product(self):
        out = nx.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
        np.testing.assert_array_equal(out, [[19, 22], [43, 50]])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nx.matmul(np.ones((2, 3)), np.ones((2, 3)))

    @pytest.mark.parametrize("seed", range(3))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        da, db = nx.matmul_backward(w, (a, b))
        assert nx.finite_diff_check(lambda t: (t @ b * w).sum(), a, da) < 1e-3
        assert nx.finite_diff_check(lambda t: (a @ t * w).sum(), b, db) < 1e-3


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).random((3, 5, 4))
        k = np.zeros((3, 3, 1, 1))
        k[[0, 1, 2], [0, 1, 2]] = 1.0
        np.testing.assert_array_equal(nx.conv2d(x, k), x)

    def test_delta_kernel_with_padding(self):
        x = np.random.default_rng(1).random((1, 6, 6))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(nx.conv2d(x, k, padding=1), x)

    def test_hand_convolution(self):
        x = np.array([[[1.0, 2], [3, 4]]])
        out = nx.conv2d(x, np.ones((1, 1, 2, 2)))
        np.testing.assert_array_equal(out, [[[10.0]]])

    def test_no_kernel_flip(self):
        x = np.arange(9.0).reshape(1, 3, 3)
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 0, 0] = 1.0  # top-left tap reads the top-left pixel
        assert nx.conv2d(x, k)[0, 0, 0] == 0.0

    def test_output_size(self):
        out = nx.conv2d(np.zeros((2, 7, 9)), np.zeros((4, 2, 3, 3)), stride=2, padding=1)
        assert out.shape == (4, (7 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            nx.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_backward_matches_finite_differences(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(2, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out, cache = nx.conv2d_forward(x, k, b, stride, padding)
        w = rng.normal(size=out.shape)
        dx, dk, db = nx.conv2d_backward(w, cache)

        def loss(xx, kk, bb):
            return (nx.conv2d_forward(xx, kk, bb, stride, padding)[0] * w).sum()

        assert nx.finite_diff_check(lambda t: loss(t, k, b), x, dx) < 1e-3
        assert nx.finite_diff_check(lambda t: loss(x, t, b), k, dk) < 1e-3
        assert nx.finite_diff_check(lambda t: loss(x, k, t), b, db) < 1e-3


class TestRelu:
    def test_sign_cases(self):
        np.testing.assert_array_equal(nx.relu(np.array([-1.0, 0, 2])), [0, 0, 2])

    def test_positive_unchanged(self):
        x = np.array([0.5, 3.0])
        np.testing.assert_array_equal(nx.relu(x), x)

    def test_gradient(self):
        _, cache = nx.relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(nx.relu_backward(np.array([5.0, 5.0, 5.0]), cache), [0, 0, 5])


class TestAvgPool:
    def test_values_and_gradient(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out, cache = nx.avg_pool2_forward(x)
        np.testing.assert_array_equal(out[0], [[2.5, 4.5], [10.5, 12.5]])
        w = np.random.default_rng(0).normal(size=out.shape)
        dx = nx.avg_pool2_backward(w, cache)
        assert nx.finite_diff_check(lambda t: (nx.avg_pool2_forward(t)[0] * w).sum(), x, dx) < 1e-6

    def test_odd_size_rejected(self):
        with pytest.raises(DimensionError):
            nx.avg_pool2_forward(np.zeros((1, 3, 4)))


class TestSGD:
    def _step(self, p, g, **kw):
        state = nx.OptimizerState(**kw)
        p = np.array([p], dtype=np.float64)
        nx.sgd_step(p, np.array([g], dtype=np.float64), state)
        return p[0]

    def test_plain_step(self):
        assert self._step(1.0, 2.0, learning_rate=0.1, momentum=0, weight_decay=0) == pytest.approx(0.8)

    def test_pure_decay(self):
        assert self._step(1.0, 0.0, learning_rate=0.1, momentum=0, weight_decay=0.5) == pytest.approx(0.95)

    def test_momentum_two_steps(self):
        state = nx.OptimizerState(learning_rate=0.1, momentum=0.9, weight_decay=0)
        p = np.zeros(1)
        nx.sgd_step(p, np.ones(1), state)
        assert state.velocity["param"][0] == pytest.approx(1.0)
        assert p[0] == pytest.approx(-0.1)
        nx.sgd_step(p, np.ones(1), state)
        assert state.velocity["param"][0] == pytest.approx(1.9)
        assert p[0] == pytest.approx(-0.29)

    def test_monotone_on_quadratic(self):
        state = nx.OptimizerState(learning_rate=0.1, momentum=0, weight_decay=0)
        p = np.array([3.0])
        values = [p[0] ** 2]
        for _ in range(10):
            nx.sgd_step(p, 2 * p, state)
            values.append(p[0] ** 2)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nx.sgd_step(np.zeros(2), np.zeros(3), nx.OptimizerState(0.1))

    def test_velocity_mirrors_params(self):
        state = nx.OptimizerState(0.1)
        p = np.zeros((2, 3))
        nx.sgd_step(p, np.ones((2, 3)), state, key="w")
        assert state.velocity["w"].shape == p.shape

    @pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(learning_rate=0.1, momentum=1.0),
                                    dict(learning_rate=0.1, weight_decay=-0.1)])
    def test_bad_hyperparameters(self, kw):
        with pytest.raises(ConfigurationError):
            nx.OptimizerState(**kw)


class TestFiniteDiff:
    def test_quadratic_scalar(self):
        assert nx.finite_diff_check(lambda x: float(x[0] ** 2), np.array([3.0]), np.array([6.0])) < 1e-6

    def test_dot_product(self):
        x = np.random.default_rng(0).normal(size=5)
        assert nx.finite_diff_check(lambda t: float(t @ t), x, 2 * x) < 1e-5

    def test_detects_wrong_gradient(self):
        x = np.array([1.0, 2.0])
        assert nx.finite_diff_check(lambda t: float(t @ t), x, x) > 0.4

    def test_non_finite(self):
        with pytest.raises(NumericError):
            nx.finite_diff_check(lambda t: float("nan"), np.zeros(1), np.zeros(1))

    def test_eps_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            nx.finite_diff_check(lambda t: 0.0, np.zeros(1), np.zeros(1), eps=0)


def test_outputs_finite_for_bounded_inputs():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1e3, 1e3, size=(2, 3, 6, 6)).astype(np.float32)
    k = rng.uniform(-1e3, 1e3, size=(4, 3, 3, 3)).astype(np.float32)
    out = nx.relu(nx.conv2d(x, k, padding=1))
    assert np.isfinite(out).all()
    assert np.isfinite(nx.matmul(x.reshape(2, -1), x.reshape(2, -1).T)).all()
