"""Random-feature Gaussian-process output layer and the Dempster-Shafer score.

The head maps an input ``h`` to random Fourier features
``phi = sqrt(2/D) * cos(h @ W.T + b)`` (frozen ``W``, ``b``) and then to raw
logits ``phi @ beta.T``. After training, a Laplace pass accumulates the
posterior precision of ``beta``; eval-mode logits are shrunk by the predictive
variance with the mean-field factor ``1 / sqrt(1 + lambda * var)``.
"""

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit, logsumexp, softmax

from .exceptions import InvalidArgumentError, NumericError, ShapeError

_TINY = np.nextafter(0.0, 1.0)
_ALMOST_ONE = np.nextafter(1.0, 0.0)


class GpHead:
    kind = "gp"

    def __init__(self, n_in, n_classes, n_features=128, length_scale=2.0, ridge=1.0,
                 mean_field_lambda=np.pi / 8, rng=None, beta_init_std=0.0, mean_field=True):
        if n_features < 1 or n_classes < 1 or n_in < 1:
            raise InvalidArgumentError("n_in, n_classes and n_features must be positive")
        if length_scale <= 0 or ridge <= 0 or mean_field_lambda < 0:
            raise InvalidArgumentError("length_scale and ridge must be positive, mean_field_lambda nonnegative")
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out = int(n_in), int(n_classes)
        self.n_features = int(n_features)
        self.length_scale = float(length_scale)
        self.ridge = float(ridge)
        self.mean_field_lambda = float(mean_field_lambda)
        self.mean_field = bool(mean_field)
        self.rff_weights = rng.normal(size=(self.n_features, self.n_in)) / self.length_scale
        self.rff_phase = rng.uniform(0.0, 2 * np.pi, size=self.n_features)
        beta = rng.normal(size=(self.n_out, self.n_features)) * beta_init_std if beta_init_std else \
            np.zeros((self.n_out, self.n_features))
        self.params = {"beta": beta}
        self.grads = {"beta": np.zeros_like(beta)}
        self.precision = self.ridge * np.eye(self.n_features)
        self.covariance = np.eye(self.n_features) / self.ridge
        self._cache = None

    @property
    def beta(self):
        return self.params["beta"]

    def set_precision(self, precision):
        precision = np.asarray(precision, dtype=np.float64)
        try:
            factor = cho_factor(precision, lower=True)
        except LinAlgError as exc:
            raise NumericError(f"GP precision matrix is not positive definite: {exc}") from exc
        self.precision = precision
        self.covariance = cho_solve(factor, np.eye(self.n_features))

    def _projection(self, h):
        if h.ndim != 2 or h.shape[1] != self.n_in:
            raise ShapeError(f"GP head expects width {self.n_in}, got shape {h.shape}")
        return h @ self.rff_weights.T + self.rff_phase

    def features(self, h):
        return np.sqrt(2.0 / self.n_features) * np.cos(self._projection(h))

    def variance(self, phi):
        return np.einsum("ij,jk,ik->i", phi, self.covariance, phi)

    def forward(self, h, train=False, rng=None, dropout=False):
        z = self._projection(h)
        phi = np.sqrt(2.0 / self.n_features) * np.cos(z)
        logits = phi @ self.beta.T
        if train:
            self._cache = (h, z, phi)
            return logits
        if self.mean_field:
            logits = logits / np.sqrt(1.0 + self.mean_field_lambda * self.variance(phi))[:, None]
        return logits

    def backward(self, grad_out):
        h, z, phi = self._cache
        self.grads["beta"] += grad_out.T @ phi
        g_phi = grad_out @ self.beta
        g_z = -np.sqrt(2.0 / self.n_features) * np.sin(z) * g_phi
        return g_z @ self.rff_weights

    def sublayers(self):
        return []

    def laplace_update(self, phi, probs):
        """Reset and accumulate the precision from features and class probabilities."""
        phi = np.asarray(phi, dtype=np.float64).reshape(-1, self.n_features)
        probs = np.asarray(probs, dtype=np.float64)
        if len(phi) and not np.allclose(probs.sum(axis=1), 1.0):
            raise InvalidArgumentError("probability rows must sum to 1")
        p_max = probs.max(axis=1) if len(phi) else np.zeros(0)
        w = p_max * (1.0 - p_max)
        self.set_precision(self.ridge * np.eye(self.n_features) + (phi * w[:, None]).T @ phi)
        return self

    def fit_precision(self, h, batch_size=4096):
        """Laplace pass over representations ``h`` using the head's own raw predictions."""
        prec = self.ridge * np.eye(self.n_features)
        for s in range(0, len(h), batch_size):
            phi = self.features(h[s:s + batch_size])
            p_max = softmax(phi @ self.beta.T, axis=1).max(axis=1)
            w = p_max * (1.0 - p_max)
            prec += (phi * w[:, None]).T @ phi
        self.set_precision(prec)
        return self


def rff_features(head, h):
    return head.features(np.asarray(h, dtype=np.float64))


def laplace_update(head, features, probs):
    return head.laplace_update(features, probs)


def predict_adjusted(head, h):
    h = np.asarray(h, dtype=np.float64)
    phi = head.features(h)
    raw = phi @ head.beta.T
    return raw / np.sqrt(1.0 + head.mean_field_lambda * head.variance(phi))[:, None]


def dempster_shafer(logits):
    """``K / (K + sum_k exp(g_k))`` along the last axis, kept strictly inside (0, 1)."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    u = expit(np.log(k) - logsumexp(logits, axis=-1))
    return np.clip(u, _TINY, _ALMOST_ONE)
