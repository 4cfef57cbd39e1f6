import numpy as np
import pytest
from scipy.stats import ortho_group

from tulip.exceptions import DegenerateFitError
from tulip.nn import DenseLayer, Network, mlp
from tulip.preservation import (collapse_resistance, distortion, fit_preservation_weights, input_distances,
                                layer_distances)


def _pairs(n=30, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.normal(size=(n, d))


def _linear(weights):
    return Network([DenseLayer(w.shape[1], w.shape[0], "identity", weights=w) for w in weights])


class TestDistances:
    def test_identity(self):
        pairs = _pairs()
        D = layer_distances(_linear([np.eye(3), np.eye(3)]), pairs)
        np.testing.assert_allclose(D, np.column_stack([input_distances(pairs)] * 2), atol=1e-15)

    def test_scaling(self):
        pairs = _pairs()
        D = layer_distances(_linear([np.eye(3), 2 * np.eye(3)]), pairs)
        np.testing.assert_allclose(D[:, 1], 2 * D[:, 0], rtol=1e-14)

    def test_tap_oracle(self):
        net = mlp(3, [5, 4], 2, seed=0)
        x1, x2 = _pairs()
        D = layer_distances(net, (x1, x2))
        for l in range(net.depth):
            h1 = net.forward(x1, taps=[l + 1])[1][0]
            h2 = net.forward(x2, taps=[l + 1])[1][0]
            np.testing.assert_allclose(D[:, l], np.linalg.norm(h1 - h2, axis=1), atol=1e-14)


class TestDistortion:
    def test_identity(self):
        np.testing.assert_allclose(distortion(_linear([np.eye(3)]), _pairs()).per_layer_rho, 1.0, atol=1e-14)

    def test_scale_two(self):
        np.testing.assert_allclose(distortion(_linear([2 * np.eye(3)]), _pairs()).per_layer_rho, 2.0, rtol=1e-14)

    def test_collapse_convention(self):
        prof = distortion(_linear([np.zeros((3, 3)), np.eye(3)]), _pairs())
        np.testing.assert_array_equal(prof.per_layer_rho[:, 1], 1.0)

    def test_orthogonal(self):
        q = ortho_group.rvs(3, random_state=0)
        np.testing.assert_allclose(distortion(_linear([q, q.T]), _pairs()).per_layer_rho, 1.0, atol=1e-12)

    def test_telescoping(self):
        net = mlp(3, [6, 6, 6], 4, seed=1)
        pairs = _pairs(seed=1)
        prof = distortion(net, pairs)
        D = layer_distances(net, pairs)
        cum = prof.pair_input_distances[:, None] * np.cumprod(prof.per_layer_rho, axis=1)
        ok = np.all(D[:, :-1] > 1e-12, axis=1)
        np.testing.assert_allclose(cum[ok], D[ok], rtol=1e-9)

    def test_csv(self, tmp_path):
        distortion(_linear([np.eye(3)]), _pairs(n=2)).to_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "pair,layer,rho" and len(lines) == 3


class TestFit:
    def test_two_identity(self):
        pairs = _pairs()
        D = layer_distances(_linear([2 * np.eye(3)]), pairs)
        fit = fit_preservation_weights(D, input_distances(pairs))
        assert fit.r[0] == pytest.approx(0.5)
        assert fit.residual < 1e-12 and fit.constant_C == pytest.approx(1.0)

    def test_proportional_columns(self):
        d_x = np.random.default_rng(0).uniform(1, 2, 40)
        D = np.column_stack([3 * d_x, 0.5 * d_x, d_x])
        assert fit_preservation_weights(D, d_x).residual < 1e-10

    def test_isotropic_linear(self):
        rng = np.random.default_rng(0)
        ws = [s * ortho_group.rvs(4, random_state=rng) for s in rng.uniform(0.5, 2, 3)]
        pairs = _pairs(d=4)
        D = layer_distances(_linear(ws), pairs)
        d_x = input_distances(pairs)
        fit = fit_preservation_weights(D, d_x)
        # normal equations oracle
        r_ref = np.linalg.solve(D.T @ D + 0 * np.eye(3), D.T @ d_x) if np.linalg.cond(D) < 1e8 else None
        assert fit.residual < 1e-8
        assert abs(fit.constant_C - 1) < 1e-3
        if r_ref is not None:
            assert np.abs(D @ r_ref - d_x).max() < 1e-8

    def test_unconstrained(self):
        d_x = np.random.default_rng(0).uniform(1, 2, 10)
        fit = fit_preservation_weights(np.column_stack([-d_x]), d_x, nonnegative=False)
        assert fit.r[0] == pytest.approx(-1.0) and fit.residual < 1e-12

    def test_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_preservation_weights(np.zeros((4, 2)), np.ones(4))


class TestCollapse:
    def test_identity(self):
        assert collapse_resistance(_linear([np.eye(3)]), _pairs()) == 1.0

    def test_zero(self):
        assert collapse_resistance(_linear([np.zeros((3, 3))]), _pairs()) == 0.0
