"""Optimizers, training configuration and the minibatch loop."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError, TrainingDivergedError
from .gp import GpHead
from .nn import cross_entropy, iter_layers


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    lr_schedule: list = field(default_factory=list)
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgumentError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        self.lr_schedule = [(int(e), float(m)) for e, m in self.lr_schedule]
        for e, _ in self.lr_schedule:
            if not 0 <= e < max(self.epochs, 1):
                raise InvalidArgumentError(f"lr_schedule epoch {e} outside [0, {self.epochs})")


class SGD:
    def __init__(self, params, momentum=0.0):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p, _ in params] if momentum else None

    def step(self, lr):
        for i, (p, g) in enumerate(self.params):
            if self.velocity is None:
                p -= lr * g
            else:
                self.velocity[i] *= self.momentum
                self.velocity[i] += g
                p -= lr * self.velocity[i]


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p, _ in params]
        self.v = [np.zeros_like(p) for p, _ in params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for (p, g), m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg, params):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.momentum)
    return Adam(params)


def run_training(objective, x, y, cfg):
    """Generic minibatch loop.

    ``objective`` provides ``parameters()`` (list of ``(param, grad)`` arrays),
    ``zero_grad()``, ``loss_and_backward(xb, yb, rng)`` and ``post_step()``.
    Returns the per-epoch mean loss.
    """
    n = len(x)
    if n == 0:
        raise InvalidArgumentError("training split is empty")
    shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    opt = make_optimizer(cfg, objective.parameters())
    schedule = dict(cfg.lr_schedule)
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        if epoch in schedule:
            lr *= schedule[epoch]
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            objective.zero_grad()
            loss = objective.loss_and_backward(x[idx], y[idx], dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            opt.step(lr)
            objective.post_step()
            total += loss * len(idx)
        history.append(total / n)
    return history


class NetworkObjective:
    def __init__(self, net, loss=cross_entropy):
        self.net = net
        self.loss = loss
        self._params = [(p, g) for _, p, g in net.named_parameters()]

    def parameters(self):
        return self._params

    def zero_grad(self):
        self.net.zero_grad()

    def loss_and_backward(self, xb, yb, rng):
        out, _ = self.net.forward(xb, "train", rng=rng)
        value, g = self.loss(out, yb)
        self.net.backward(g)
        return value

    def post_step(self):
        self.net.apply_spectral_norm()


def fit_gp_layers(net, x):
    """Laplace pass for every top-level GP head in ``net`` over inputs ``x``."""
    h = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, GpHead):
            layer.fit_precision(h)
        h = layer.forward(h)
    return net


def _train_arrays(data):
    if hasattr(data, "xy"):
        return data.xy("train")
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def train(net, data, cfg, loss=cross_entropy):
    """Train ``net`` in place on a Dataset's train split (or an ``(x, y)`` pair).

    Spectral normalization runs after every update; GP heads get their Laplace
    pass once training ends. Returns ``(net, loss_history)``.
    """
    x, y = _train_arrays(data)
    history = run_training(NetworkObjective(net, loss), x, y, cfg)
    if any(isinstance(l, GpHead) for l in iter_layers(net.layers)):
        fit_gp_layers(net, x)
    return net, history
