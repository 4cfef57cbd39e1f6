"""scikit-learn compatible wrappers around the models in this package.

Every classifier exposes ``fit``, ``predict``, ``predict_proba`` and
``uncertainty`` (higher means more uncertain), so the scores plug directly into
:func:`tulip.metrics.auroc` or any sklearn tooling that takes an estimator.
"""

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines, combiner, sdn
from .exceptions import InvalidArgumentError
from .gp import dempster_shafer
from .nn import mlp, residual_mlp
from .training import TrainConfig, train


class _UncertaintyClassifier(ClassifierMixin, BaseEstimator):
    """Shared label encoding and training-config plumbing."""

    def _encode(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        return X, y_enc

    def _check(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def _train_config(self, seed=None):
        return TrainConfig(self.optimizer, self.learning_rate, self.epochs, self.batch_size,
                           list(self.lr_schedule or []), self.random_state if seed is None else seed)

    def predict(self, X):
        check_is_fitted(self, "classes_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class DNNClassifier(_UncertaintyClassifier):
    """Plain MLP (optionally residual and/or spectrally normalized).

    ``score`` selects the uncertainty: ``"entropy"`` (softmax entropy) or
    ``"energy"`` (negative log-sum-exp of the logits).
    """

    def __init__(self, hidden=(64, 64), residual=False, spectral_norm=None, score="entropy",
                 optimizer="adam", learning_rate=1e-3, epochs=200, batch_size=32, lr_schedule=(),
                 random_state=0):
        self.hidden = hidden
        self.residual = residual
        self.spectral_norm = spectral_norm
        self.score = score
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    def _build(self, n_in, n_classes, seed):
        hidden = list(self.hidden)
        if self.residual:
            return residual_mlp(n_in, hidden[0], len(hidden) - 1, n_classes, self.spectral_norm, seed)
        return mlp(n_in, hidden, n_classes, spectral_norm=self.spectral_norm, seed=seed)

    def fit(self, X, y):
        X, y = self._encode(X, y)
        self.network_ = self._build(X.shape[1], len(self.classes_), self.random_state)
        _, self.loss_history_ = train(self.network_, (X, y), self._train_config())
        return self

    def decision_function(self, X):
        return self.network_.forward(self._check(X))[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def uncertainty(self, X):
        logits = self.decision_function(X)
        if self.score == "energy":
            return baselines.energy_score(logits)
        return baselines.softmax_entropy(logits)


class MCDropoutClassifier(DNNClassifier):
    """MLP with dropout after every hidden layer.

    Predictions are single-pass without dropout; ``uncertainty`` averages
    ``passes`` stochastic passes and returns total entropy or disagreement.
    """

    def __init__(self, hidden=(64, 64), dropout=0.01, passes=10, score="total", optimizer="adam",
                 learning_rate=1e-3, epochs=200, batch_size=32, lr_schedule=(), random_state=0):
        super().__init__(hidden=hidden, score=score, optimizer=optimizer, learning_rate=learning_rate,
                         epochs=epochs, batch_size=batch_size, lr_schedule=lr_schedule,
                         random_state=random_state)
        self.dropout = dropout
        self.passes = passes

    def _build(self, n_in, n_classes, seed):
        return mlp(n_in, list(self.hidden), n_classes, dropout=self.dropout, seed=seed)

    def uncertainty(self, X):
        total, disagreement = baselines.mc_dropout_scores(self.network_, self._check(X), self.passes,
                                                          self.random_state)
        return disagreement if self.score == "disagreement" else total


class DeepEnsembleClassifier(_UncertaintyClassifier):
    """Independently trained MLPs with seeds ``random_state + i``."""

    def __init__(self, n_members=10, hidden=(64, 64), score="total", optimizer="sgd", learning_rate=0.008,
                 epochs=400, batch_size=32, lr_schedule=(), random_state=0):
        self.n_members = n_members
        self.hidden = hidden
        self.score = score
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._encode(X, y)
        k = len(self.classes_)
        self.ensemble_ = baselines.train_ensemble(lambda s: mlp(X.shape[1], list(self.hidden), k, seed=s),
                                                  (X, y), self._train_config(), self.n_members)
        return self

    def predict_proba(self, X):
        return self.ensemble_.predict_proba(self._check(X))

    def scores(self, X):
        """``(total, disagreement)`` per sample."""
        return baselines.ensemble_scores(self.ensemble_, self._check(X))

    def uncertainty(self, X):
        total, disagreement = self.scores(X)
        return disagreement if self.score == "disagreement" else total


class SNGPClassifier(_UncertaintyClassifier):
    """Spectrally normalized residual MLP with a GP output head; Dempster-Shafer uncertainty."""

    def __init__(self, depth=2, width=64, sn_coefficient=3.0, n_features=128, length_scale=2.0, ridge=1.0,
                 mean_field_lambda=np.pi / 8, optimizer="adam", learning_rate=1e-3, epochs=200, batch_size=32,
                 lr_schedule=(), random_state=0):
        self.depth = depth
        self.width = width
        self.sn_coefficient = sn_coefficient
        self.n_features = n_features
        self.length_scale = length_scale
        self.ridge = ridge
        self.mean_field_lambda = mean_field_lambda
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._encode(X, y)
        gp = dict(n_features=self.n_features, length_scale=self.length_scale, ridge=self.ridge,
                  mean_field_lambda=self.mean_field_lambda)
        self.network_ = baselines.build_sngp(self.depth, self.width, len(self.classes_), self.sn_coefficient,
                                             X.shape[1], gp, self.random_state)
        _, self.loss_history_ = train(self.network_, (X, y), self._train_config())
        return self

    def decision_function(self, X):
        return self.network_.forward(self._check(X))[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def uncertainty(self, X):
        return dempster_shafer(self.decision_function(X))


class TulipClassifier(_UncertaintyClassifier):
    """Shallow-deep MLP with GP exits and a switch-fitted combination head.

    ``fit`` trains all exits jointly, then fits the combination head on
    unlabeled validation features: either ``X_val`` when given, or a
    ``validation_fraction`` of ``X`` held out from training (its labels are
    dropped before anything else sees them).
    """

    def __init__(self, hidden=(64, 64, 64), n_ic=2, taps=None, use_gp=True, residual=False, spectral_norm=None,
                 n_features=128, length_scale=2.0, ridge=1.0, mean_field_lambda=np.pi / 8, loss_weights=None,
                 optimizer="adam", learning_rate=1e-3, epochs=800, batch_size=32, lr_schedule=(),
                 validation_fraction=0.1, n_s="auto", polarity="switches_high_uncertain", include_final=False,
                 reg=1e-3, random_state=0):
        self.hidden = hidden
        self.n_ic = n_ic
        self.taps = taps
        self.use_gp = use_gp
        self.residual = residual
        self.spectral_norm = spectral_norm
        self.n_features = n_features
        self.length_scale = length_scale
        self.ridge = ridge
        self.mean_field_lambda = mean_field_lambda
        self.loss_weights = loss_weights
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_schedule = lr_schedule
        self.validation_fraction = validation_fraction
        self.n_s = n_s
        self.polarity = polarity
        self.include_final = include_final
        self.reg = reg
        self.random_state = random_state

    def _backbone(self, n_in):
        hidden = list(self.hidden)
        if self.residual:
            return residual_mlp(n_in, hidden[0], len(hidden) - 1, None, self.spectral_norm, self.random_state)
        return mlp(n_in, hidden, None, spectral_norm=self.spectral_norm, seed=self.random_state)

    def fit(self, X, y, X_val=None):
        X, y = self._encode(X, y)
        if X_val is None:
            rng = np.random.default_rng(self.random_state)
            n_val = min(int(np.floor(self.validation_fraction * len(X) + 1e-9)), len(X) - 1)
            perm = rng.permutation(len(X))
            val, keep = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            X_val, X, y = X[val], X[keep], y[keep]
        X_val = check_array(X_val, dtype=np.float64)
        gp = dict(n_features=self.n_features, length_scale=self.length_scale, ridge=self.ridge,
                  mean_field_lambda=self.mean_field_lambda)
        self.model_ = sdn.build_sdn(self._backbone(X.shape[1]), len(self.classes_), self.n_ic, self.taps,
                                    self.use_gp, gp, seed=self.random_state)
        _, self.loss_history_ = sdn.train_sdn(self.model_, (X, y), self._train_config(), self.loss_weights)
        self.fit_head(X_val)
        return self

    def fit_head(self, X_val):
        """(Re)fit only the combination head from unlabeled features."""
        self.head_ = combiner.fit_combination_head(self.model_, X_val, self.n_s, self.polarity, self.reg,
                                                   self.include_final)
        return self

    def exit_logits(self, X):
        return sdn.exit_logits(self.model_, self._check(X))

    def predict_proba(self, X):
        return softmax(self.exit_logits(X)[-1], axis=1)

    def predict_with_uncertainty(self, X):
        labels, u = combiner.predict_with_uncertainty(self.model_, self.head_, self._check(X))
        return self.classes_[labels], u

    def uncertainty(self, X):
        return self.predict_with_uncertainty(X)[1]

    def exit_uncertainties(self, X):
        return combiner.uncertainty_profiles(self.model_, self._check(X), self.include_final)

    def exit_scores(self, X, include_final=None):
        """``(total, disagreement)``: entropy of the mean exit distribution and its Jensen gap."""
        include_final = self.include_final if include_final is None else include_final
        logits = self.exit_logits(X)
        if not include_final:
            logits = logits[:-1]
        return baselines.total_and_disagreement(np.stack([softmax(l, axis=1) for l in logits]))

    def disagreement(self, X, include_final=None):
        return self.exit_scores(X, include_final)[1]

    def prediction_switches(self, X):
        return sdn.prediction_switches(self.model_, self._check(X), self.include_final)


ESTIMATORS = {
    "softmax_entropy": (DNNClassifier, {"score": "entropy"}),
    "energy": (DNNClassifier, {"score": "energy"}),
    "ensemble_total": (DeepEnsembleClassifier, {"score": "total"}),
    "ensemble_disagreement": (DeepEnsembleClassifier, {"score": "disagreement"}),
    "mc_dropout": (MCDropoutClassifier, {}),
    "sngp": (SNGPClassifier, {}),
    "tulip": (TulipClassifier, {}),
}


def make_estimator(kind, **params):
    if kind not in ESTIMATORS:
        raise InvalidArgumentError(f"unknown estimator kind {kind!r}; expected one of {sorted(ESTIMATORS)}")
    cls, defaults = ESTIMATORS[kind]
    return cls(**{**defaults, **params})
