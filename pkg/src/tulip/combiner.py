"""Combination head: weights for per-exit uncertainty scores fitted on unlabeled data.

Proxy labels come from prediction switches between consecutive internal
classifiers; a regularized logistic regression maps the per-exit
Dempster-Shafer scores to those labels and its (clamped) coefficients become
the combination weights.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import DegenerateLabelsError, InvalidArgumentError, UnsupportedConfigurationError
from .gp import dempster_shafer
from .sdn import count_switches, exit_logits, exit_predictions

POLARITIES = ("switches_high_uncertain", "switches_low_uncertain")

# clamped weights summing to at most this count as "all zero"
FALLBACK_TOL = 1e-8


@dataclass
class CombinationHead:
    r: np.ndarray
    n_s: int = 1
    polarity: str = "switches_high_uncertain"
    fallback_equal: bool = False
    include_final: bool = False
    intercept: float = 0.0
    raw_coef: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        if self.polarity not in POLARITIES:
            raise InvalidArgumentError(f"polarity must be one of {POLARITIES}")
        if np.any(self.r < 0):
            raise InvalidArgumentError("combination weights must be nonnegative")
        if not self.fallback_equal and self.r.sum() <= 0:
            raise InvalidArgumentError("weights sum to zero; set fallback_equal")

    def to_dict(self):
        return {"r": [float(v) for v in self.r], "n_s": int(self.n_s), "polarity": self.polarity,
                "fallback_equal": bool(self.fallback_equal), "include_final": bool(self.include_final)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["r"], dtype=np.float64), int(d["n_s"]), d["polarity"],
                   bool(d["fallback_equal"]), bool(d.get("include_final", False)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _scoring_exits(model, include_final):
    n = model.n_ic + (1 if include_final else 0)
    if n < 2:
        raise UnsupportedConfigurationError("switch-based fitting needs at least two scoring exits")
    return n


def uncertainty_profiles(model, x, include_final=False, logits=None):
    """``[n x N_IC]`` Dempster-Shafer scores of the internal classifiers."""
    logits = exit_logits(model, x) if logits is None else logits
    if not include_final:
        logits = logits[:-1]
    return np.column_stack([dempster_shafer(l) for l in logits])


def switch_labels(switches, n_s, polarity="switches_high_uncertain"):
    switches = np.asarray(switches)
    if polarity == "switches_high_uncertain":
        return (switches >= n_s).astype(np.int64)
    if polarity == "switches_low_uncertain":
        return (switches < n_s).astype(np.int64)
    raise InvalidArgumentError(f"polarity must be one of {POLARITIES}")


def proxy_labels(model, x_val, n_s, polarity="switches_high_uncertain", include_final=False, logits=None):
    """Binary high-uncertainty labels from switch counts; reads features only."""
    n_exits = _scoring_exits(model, include_final)
    if not 1 <= n_s <= n_exits:
        raise InvalidArgumentError(f"n_s must lie in [1, {n_exits}], got {n_s}")
    preds = exit_predictions(model, x_val, include_final, logits)
    return switch_labels(count_switches(preds), n_s, polarity)


def ns_from_switches(switches, n_exits):
    """Mean switch count rounded half-up, clamped to ``[1, n_exits - 1]``."""
    switches = np.asarray(switches)
    if switches.size == 0:
        raise InvalidArgumentError("validation set is empty")
    n_s = int(np.floor(switches.mean() + 0.5))
    return int(min(max(n_s, 1), max(n_exits - 1, 1)))


def choose_ns(model, x_val, include_final=False, logits=None):
    n_exits = _scoring_exits(model, include_final)
    if logits is None and len(x_val) == 0:
        raise InvalidArgumentError("validation set is empty")
    preds = exit_predictions(model, x_val, include_final, logits)
    return ns_from_switches(count_switches(preds), n_exits)


def logistic_regression(v, s, reg=1e-3, tol=1e-8, max_iter=200):
    """Newton's method on the mean Bernoulli NLL plus ``reg/2 * |w|^2`` (intercept unpenalized).

    Returns ``(w, b)``; iterates until the gradient norm drops below ``tol``.
    """
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n, d = v.shape
    xa = np.hstack([v, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    penalty = np.full(d + 1, reg)
    penalty[-1] = 0.0

    def objective(t):
        z = xa @ t
        # log(1 + e^z) - s z, stable for large |z|
        return np.mean(np.logaddexp(0.0, z) - s * z) + 0.5 * np.sum(penalty * t * t)

    for _ in range(max_iter):
        p = expit(xa @ theta)
        grad = xa.T @ (p - s) / n + penalty * theta
        if np.linalg.norm(grad) < tol:
            break
        w = p * (1.0 - p)
        hess = (xa * w[:, None]).T @ xa / n + np.diag(penalty)
        # tiny jitter keeps the intercept direction solvable under separation
        step = np.linalg.solve(hess + 1e-12 * np.eye(d + 1), grad)
        f0, t = objective(theta), 1.0
        while objective(theta - t * step) > f0 - 1e-4 * t * (grad @ step) and t > 1e-10:
            t *= 0.5
        theta = theta - t * step
    return theta[:-1], float(theta[-1])


def fit_lr(profiles, labels, reg=1e-3, n_s=1, polarity="switches_high_uncertain", include_final=False):
    """Fit combination weights; negative coefficients are clamped to zero."""
    v = np.asarray(profiles, dtype=np.float64)
    s = np.asarray(labels)
    if v.ndim != 2 or len(v) != len(s):
        raise InvalidArgumentError("profiles must be [n x N_IC] with one label per row")
    if len(np.unique(s)) < 2:
        raise DegenerateLabelsError("proxy labels contain a single class; cannot fit weights")
    w, b = logistic_regression(v, s, reg)
    r = np.maximum(w, 0.0)
    fallback = bool(r.sum() <= FALLBACK_TOL)
    if fallback:
        r = np.zeros_like(r)
    return CombinationHead(r, n_s, polarity, fallback, include_final, b, w)


def equal_head(n_exits, n_s=1, polarity="switches_high_uncertain", include_final=False):
    return CombinationHead(np.zeros(n_exits), n_s, polarity, True, include_final)


def combined_uncertainty(head, profile):
    """Weighted mean of per-exit scores; plain mean when the fallback is engaged.

    Accepts one profile ``[N]`` or a batch ``[n x N]``.
    """
    v = np.asarray(profile, dtype=np.float64)
    if head.fallback_equal:
        return v.mean(axis=-1)
    if v.shape[-1] != len(head.r):
        raise InvalidArgumentError(f"profile has {v.shape[-1]} scores, head has {len(head.r)} weights")
    return (v @ head.r) / head.r.sum()


def fit_combination_head(model, x_val, n_s="auto", polarity="switches_high_uncertain", reg=1e-3,
                         include_final=False, on_degenerate="fallback"):
    """Proxy labels, profiles and logistic fit from unlabeled validation features.

    With ``on_degenerate="fallback"`` a single-class proxy labelling yields an
    equal-weight head instead of raising.
    """
    x_val = np.asarray(x_val, dtype=np.float64)
    if len(x_val) == 0:
        raise InvalidArgumentError("validation set is empty")
    logits = exit_logits(model, x_val)
    n_exits = _scoring_exits(model, include_final)
    if n_s == "auto":
        n_s = choose_ns(model, x_val, include_final, logits)
    labels = proxy_labels(model, x_val, n_s, polarity, include_final, logits)
    profiles = uncertainty_profiles(model, x_val, include_final, logits)
    try:
        return fit_lr(profiles, labels, reg, n_s, polarity, include_final)
    except DegenerateLabelsError:
        if on_degenerate != "fallback":
            raise
        return equal_head(n_exits, n_s, polarity, include_final)


def predict_with_uncertainty(model, head, x):
    """Final-head predictions and combined uncertainty from one backbone pass."""
    logits = exit_logits(model, x)
    profiles = uncertainty_profiles(model, x, head.include_final, logits)
    return logits[-1].argmax(axis=1), combined_uncertainty(head, profiles)
