"""Reference uncertainty estimators: entropy, energy, ensembles, MC-dropout, SN+GP."""

from dataclasses import replace

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import InvalidArgumentError, UnsupportedConfigurationError
from .gp import GpHead
from .nn import DenseLayer, DropoutLayer, Network, ResidualBlock, iter_layers
from .training import train

ESTIMATOR_KINDS = ("softmax_entropy", "energy", "ensemble_total", "ensemble_disagreement",
                   "mc_dropout", "sngp", "tulip")


def entropy(probs, axis=-1):
    """Shannon entropy in nats; ``0 log 0`` is taken as 0."""
    probs = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(probs > 0, probs, 1.0))
    return -np.sum(probs * logp, axis=axis)


def softmax_entropy(logits):
    logits = np.asarray(logits, dtype=np.float64)
    logp = logits - logsumexp(logits, axis=-1, keepdims=True)
    return -np.sum(np.exp(logp) * logp, axis=-1)


def energy_score(logits):
    """``-log sum_k exp(g_k)``; higher means more uncertain."""
    return -logsumexp(np.asarray(logits, dtype=np.float64), axis=-1)


def total_and_disagreement(member_probs):
    """Entropy of the mean distribution and its Jensen gap over members.

    ``member_probs`` is ``[members x n x K]``.
    """
    member_probs = np.asarray(member_probs, dtype=np.float64)
    total = entropy(member_probs.mean(axis=0))
    disagreement = total - entropy(member_probs).mean(axis=0)
    # the gap is nonnegative; clip round-off below zero
    return total, np.maximum(disagreement, 0.0)


class Ensemble:
    def __init__(self, members):
        members = list(members)
        if len(members) < 2:
            raise InvalidArgumentError("an ensemble needs at least two members")
        if len({m.n_out for m in members}) != 1 or len({m.n_in for m in members}) != 1:
            raise UnsupportedConfigurationError("ensemble members must share input width and class count")
        self.members = members

    def __len__(self):
        return len(self.members)

    def member_probs(self, x):
        return np.stack([softmax(m.forward(x)[0], axis=1) for m in self.members])

    def predict_proba(self, x):
        return self.member_probs(x).mean(axis=0)


def ensemble_scores(ens, x):
    return total_and_disagreement(ens.member_probs(np.asarray(x, dtype=np.float64)))


def train_ensemble(factory, data, cfg, n_members=10):
    """Train ``n_members`` networks from ``factory(seed)`` with seeds ``cfg.seed + i``."""
    members = []
    for i in range(n_members):
        net = factory(cfg.seed + i)
        train(net, data, replace(cfg, seed=cfg.seed + i))
        members.append(net)
    return Ensemble(members)


def mc_dropout_scores(net, x, passes=10, seed=0):
    if not any(isinstance(l, DropoutLayer) for l in iter_layers(net.layers)):
        raise UnsupportedConfigurationError("network has no dropout layers")
    if passes < 2:
        raise InvalidArgumentError("need at least two stochastic passes")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    probs = np.stack([softmax(net.forward(x, "eval", rng=rng, dropout=True)[0], axis=1)
                      for _ in range(passes)])
    return total_and_disagreement(probs)


def build_sngp(depth, width, n_classes, sn_coefficient=3.0, n_in=None, gp_kwargs=None, seed=0):
    """Spectrally normalized residual MLP with a GP output head.

    ``depth`` counts residual blocks; an input projection to ``width`` comes
    first when ``n_in`` differs from ``width``. ``sn_coefficient=inf`` (or
    ``None``) disables normalization.
    """
    if depth < 1 or width < 1 or n_classes < 1:
        raise UnsupportedConfigurationError("depth, width and n_classes must be positive")
    if sn_coefficient is not None and not sn_coefficient > 0:
        raise UnsupportedConfigurationError("sn_coefficient must be positive")
    rng = np.random.default_rng(seed)
    n_in = width if n_in is None else n_in
    layers = []
    if n_in != width:
        layers.append(DenseLayer(n_in, width, "relu", sn_coefficient, rng=rng))
    for _ in range(depth):
        layers.append(ResidualBlock([DenseLayer(width, width, "relu", sn_coefficient, rng=rng),
                                     DenseLayer(width, width, "identity", sn_coefficient, rng=rng)]))
    layers.append(GpHead(width, n_classes, rng=rng, **(gp_kwargs or {})))
    return Network(layers)
