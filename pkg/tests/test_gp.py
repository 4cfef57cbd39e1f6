import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_differences, naive_cross_entropy, relative_error
from tulip.exceptions import InvalidArgumentError, NumericError, ShapeError
from tulip.gp import GpHead, dempster_shafer, laplace_update, predict_adjusted, rff_features
from tulip.nn import DenseLayer, Network, backward


class TestRff:
    def test_zero_input(self):
        head = GpHead(3, 2, n_features=16, rng=0)
        phi = rff_features(head, np.zeros((1, 3)))
        np.testing.assert_allclose(phi[0], np.sqrt(2 / 16) * np.cos(head.rff_phase), atol=1e-15)

    def test_bounds(self):
        head = GpHead(3, 2, n_features=64, rng=1)
        phi = rff_features(head, np.random.default_rng(0).normal(scale=10, size=(100, 3)))
        assert np.abs(phi).max() <= np.sqrt(2 / 64) + 1e-15

    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0, 4.0])
    def test_rbf_kernel(self, delta):
        head = GpHead(2, 1, n_features=4096, length_scale=2.0, rng=3)
        x = np.array([[0.3, -0.2]])
        y = x + np.array([[delta, 0.0]])
        k = float((rff_features(head, x) @ rff_features(head, y).T)[0, 0])
        # Monte-Carlo std of the estimate is about 1/sqrt(D)
        assert abs(k - math.exp(-delta ** 2 / (2 * 2.0 ** 2))) < 4 / math.sqrt(4096)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            rff_features(GpHead(3, 2, rng=0), np.zeros((2, 4)))

    def test_deterministic(self):
        a, b = GpHead(3, 2, rng=5), GpHead(3, 2, rng=5)
        x = np.ones((2, 3))
        assert rff_features(a, x).tobytes() == rff_features(b, x).tobytes()


class TestLaplace:
    def test_empty(self):
        head = laplace_update(GpHead(2, 2, n_features=4, ridge=0.5, rng=0), np.zeros((0, 4)), np.zeros((0, 2)))
        np.testing.assert_array_equal(head.precision, 0.5 * np.eye(4))

    def test_confident_sample(self):
        head = laplace_update(GpHead(2, 2, n_features=4, rng=0), np.ones((1, 4)), np.array([[1.0, 0.0]]))
        np.testing.assert_array_equal(head.precision, np.eye(4))

    def test_hand_sum(self):
        phi = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
        probs = np.array([[0.7, 0.3], [0.5, 0.5], [0.1, 0.9]])
        head = laplace_update(GpHead(2, 2, n_features=2, ridge=1.0, rng=0), phi, probs)
        expected = np.eye(2)
        for f, p in zip(phi, probs):
            pm = max(p)
            for i in range(2):
                for j in range(2):
                    expected[i, j] += pm * (1 - pm) * f[i] * f[j]
        np.testing.assert_allclose(head.precision, expected, atol=1e-14)

    def test_probs_must_sum_to_one(self):
        with pytest.raises(InvalidArgumentError):
            laplace_update(GpHead(2, 2, n_features=2, rng=0), np.ones((1, 2)), np.array([[0.2, 0.2]]))

    def test_eigenvalues_above_ridge(self):
        rng = np.random.default_rng(0)
        head = GpHead(3, 3, n_features=32, ridge=0.7, rng=0)
        head.fit_precision(rng.normal(size=(200, 3)))
        assert np.linalg.eigvalsh(head.precision).min() >= 0.7 - 1e-10

    def test_singular_precision(self):
        with pytest.raises(NumericError):
            GpHead(2, 2, n_features=2, rng=0).set_precision(np.zeros((2, 2)))


class TestAdjusted:
    def _head(self, lam=np.pi / 8):
        head = GpHead(2, 3, n_features=8, mean_field_lambda=lam, rng=0)
        head.params["beta"][:] = np.random.default_rng(1).normal(size=(3, 8))
        return head

    def test_lambda_zero(self):
        head = self._head(0.0)
        h = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_allclose(predict_adjusted(head, h), rff_features(head, h) @ head.beta.T)

    def test_zero_variance(self):
        head = self._head()
        head.covariance = np.zeros((8, 8))
        h = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_array_equal(predict_adjusted(head, h), rff_features(head, h) @ head.beta.T)

    def test_halved(self):
        head = self._head(1.0)
        h = np.random.default_rng(0).normal(size=(1, 2))
        phi = rff_features(head, h)[0]
        # choose a covariance giving variance exactly 3
        head.covariance = 3.0 * np.outer(phi, phi) / (phi @ phi) ** 2
        np.testing.assert_allclose(predict_adjusted(head, h), 0.5 * (phi @ head.beta.T)[None], atol=1e-14)

    def test_argmax_preserved(self):
        head = self._head()
        h = np.random.default_rng(2).normal(size=(50, 2))
        head.fit_precision(h)
        raw = rff_features(head, h) @ head.beta.T
        np.testing.assert_array_equal(predict_adjusted(head, h).argmax(1), raw.argmax(1))

    def test_eval_forward_matches(self):
        head = self._head()
        h = np.random.default_rng(2).normal(size=(4, 2))
        np.testing.assert_array_equal(head.forward(h), predict_adjusted(head, h))


class TestDempsterShafer:
    def test_zero_logits(self):
        assert dempster_shafer(np.zeros(3)) == pytest.approx(0.5, abs=1e-15)

    def test_analytic(self):
        assert dempster_shafer(np.log([2.0, 2.0])) == pytest.approx(1 / 3, abs=1e-15)

    def test_saturation(self):
        u = dempster_shafer(np.array([1000.0, 0.0, 0.0]))
        assert 0 < u < 1e-300 or (0 < u and u == np.nextafter(0.0, 1.0))
        u = dempster_shafer(np.array([-1000.0, -1000.0]))
        assert 0 < u < 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=6), st.floats(0.01, 10))
    def test_shift_decreases(self, logits, c):
        g = np.array(logits)
        assert dempster_shafer(g + c) < dempster_shafer(g)

    def test_batch(self):
        g = np.random.default_rng(0).normal(size=(7, 4))
        u = dempster_shafer(g)
        expected = [4 / (4 + sum(math.exp(v) for v in row)) for row in g]
        np.testing.assert_allclose(u, expected, rtol=1e-13)


def test_beta_gradient_through_network():
    rng = np.random.default_rng(0)
    head = GpHead(4, 3, n_features=16, rng=1, beta_init_std=0.5)
    net = Network([DenseLayer(2, 4, "relu", rng=2), head])
    x, y = rng.normal(size=(6, 2)), rng.integers(0, 3, 6)
    grads = backward(net, x, y)
    f = lambda: naive_cross_entropy(net.forward(x, "train")[0], y)
    for name, p, _ in net.named_parameters():
        assert relative_error(grads[name], central_differences(f, p)) < 1e-4


def test_train_mode_returns_raw_logits():
    head = GpHead(2, 2, n_features=8, rng=0, beta_init_std=1.0)
    h = np.ones((3, 2))
    np.testing.assert_array_equal(head.forward(h, train=True), rff_features(head, h) @ head.beta.T)
