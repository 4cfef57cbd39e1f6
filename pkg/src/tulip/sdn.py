"""Shallow-deep networks: a backbone with internal classifiers on its taps."""

import copy
import math

import numpy as np

from .exceptions import InvalidArgumentError, ShapeError, UnsupportedConfigurationError
from .gp import GpHead
from .nn import DenseLayer, Network, cross_entropy, iter_layers
from .training import run_training


class InternalClassifier:
    """Projector (one identity dense layer) followed by an output head.

    The head is a :class:`GpHead` by default, or a linear layer to ``K`` logits.
    """

    def __init__(self, tap_index, projector, head):
        self.tap_index = int(tap_index)
        self.projector = projector
        self.head = head

    @property
    def layers(self):
        return [self.projector, self.head]

    def forward(self, h, train=False):
        return self.head.forward(self.projector.forward(h, train), train)

    def backward(self, grad):
        return self.projector.backward(self.head.backward(grad))


def _make_head(n_in, n_classes, use_gp, gp_kwargs, rng):
    if use_gp:
        return GpHead(n_in, n_classes, rng=rng, **gp_kwargs)
    return DenseLayer(n_in, n_classes, "identity", rng=rng)


class SdnModel:
    """Backbone network, ordered internal classifiers and a final head.

    Exit order everywhere is ``[IC_1, ..., IC_N, final]``.
    """

    def __init__(self, backbone, ics, final_head):
        taps = [ic.tap_index for ic in ics]
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise InvalidArgumentError("internal classifiers must be ordered by strictly increasing tap")
        n_out = {final_head.n_out} | {ic.head.n_out for ic in ics}
        if len(n_out) != 1:
            raise ShapeError("all exits must produce the same number of classes")
        backbone.tap_points = tuple(taps)
        self.backbone = backbone
        self.ics = list(ics)
        self.final_head = final_head

    @property
    def n_ic(self):
        return len(self.ics)

    @property
    def n_classes(self):
        return self.final_head.n_out

    def head_layers(self):
        out = []
        for ic in self.ics:
            out.extend(ic.layers)
        out.append(self.final_head)
        return out

    def named_parameters(self):
        params = self.backbone.named_parameters("backbone.")
        for i, ic in enumerate(self.ics):
            for name, layer in (("projector", ic.projector), ("head", ic.head)):
                params += [(f"ic{i}.{name}.{k}", layer.params[k], layer.grads[k]) for k in layer.params]
        params += [(f"final.{k}", self.final_head.params[k], self.final_head.grads[k])
                   for k in self.final_head.params]
        return params

    def zero_grad(self):
        for _, _, g in self.named_parameters():
            g.fill(0.0)

    def forward(self, x, mode="eval", rng=None):
        train = mode == "train"
        out, taps = self.backbone.forward(x, mode, rng=rng)
        logits = [ic.forward(t, train) for ic, t in zip(self.ics, taps)]
        logits.append(self.final_head.forward(out, train))
        return logits

    def backward(self, exit_grads):
        tap_grads = {}
        for ic, g in zip(self.ics, exit_grads[:-1]):
            gi = ic.backward(g)
            tap_grads[ic.tap_index] = tap_grads.get(ic.tap_index, 0.0) + gi
        g_out = self.final_head.backward(exit_grads[-1])
        return self.backbone.backward(g_out, tap_grads)

    def representations(self, x):
        """Eval-mode inputs of each exit head: projected taps, then the backbone output."""
        out, taps = self.backbone.forward(x, "eval")
        return [ic.projector.forward(t) for ic, t in zip(self.ics, taps)] + [out]

    def exit_heads(self):
        return [ic.head for ic in self.ics] + [self.final_head]

    def copy(self):
        return copy.deepcopy(self)


def place_ics(backbone, n_ic):
    """Uniformly spaced taps ``ceil(j * L / (n_ic + 1))`` for ``j = 1..n_ic``."""
    depth = backbone if isinstance(backbone, int) else backbone.depth
    if n_ic < 1:
        raise InvalidArgumentError("n_ic must be positive")
    if n_ic >= depth:
        raise InvalidArgumentError(f"cannot place {n_ic} internal classifiers in a depth-{depth} backbone")
    return [math.ceil(j * depth / (n_ic + 1)) for j in range(1, n_ic + 1)]


def build_sdn(backbone, n_classes, n_ic=None, taps=None, use_gp=True, gp_kwargs=None, seed=0):
    """Attach internal classifiers and a final head to ``backbone``.

    ``taps`` overrides the uniform placement from :func:`place_ics`.
    """
    rng = np.random.default_rng(seed)
    gp_kwargs = dict(gp_kwargs or {})
    if taps is None:
        taps = place_ics(backbone, n_ic)
    ics = []
    for t in taps:
        width = backbone.width_at(t)
        projector = DenseLayer(width, width, "identity", rng=rng)
        ics.append(InternalClassifier(t, projector, _make_head(width, n_classes, use_gp, gp_kwargs, rng)))
    final = _make_head(backbone.n_out, n_classes, use_gp, gp_kwargs, rng)
    return SdnModel(backbone, ics, final)


def equal_weights(n_ic):
    return np.full(n_ic + 1, 1.0 / (n_ic + 1))


def _check_weights(model, weights):
    if weights is None:
        return equal_weights(model.n_ic)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (model.n_ic + 1,):
        raise InvalidArgumentError(f"need {model.n_ic + 1} loss weights (final head first), got {weights.shape}")
    if np.any(weights < 0):
        raise InvalidArgumentError("loss weights must be nonnegative")
    return weights


def _weighted_loss(exit_logits, y, weights):
    """Total loss, per-exit losses (final first) and per-exit logit gradients (exit order)."""
    per_exit, grads = [], []
    for logits in [exit_logits[-1]] + exit_logits[:-1]:
        value, g = cross_entropy(logits, y)
        per_exit.append(value)
        grads.append(g)
    total = float(np.dot(weights, per_exit))
    scaled = [w * g for w, g in zip(weights, grads)]
    return total, np.array(per_exit), scaled[1:] + scaled[:1]


def sdn_loss(model, x, y, weights=None):
    """Weighted sum of per-exit cross-entropies on raw (training-mode) logits.

    ``weights[0]`` weights the final head, ``weights[i]`` the i-th internal
    classifier. Returns ``(total, per_exit_losses)`` with per-exit losses in the
    same order as the weights.
    """
    weights = _check_weights(model, weights)
    logits = model.forward(x, "train")
    total, per_exit, _ = _weighted_loss(logits, np.asarray(y), weights)
    return total, per_exit


class SdnObjective:
    def __init__(self, model, weights):
        self.model = model
        self.weights = weights
        self._params = [(p, g) for _, p, g in model.named_parameters()]

    def parameters(self):
        return self._params

    def zero_grad(self):
        self.model.zero_grad()

    def loss_and_backward(self, xb, yb, rng):
        logits = self.model.forward(xb, "train", rng=rng)
        total, _, grads = _weighted_loss(logits, yb, self.weights)
        self.model.backward(grads)
        return total

    def post_step(self):
        self.model.backbone.apply_spectral_norm()


def fit_heads(model, x):
    """Laplace pass of every GP exit head over inputs ``x``."""
    for head, h in zip(model.exit_heads(), model.representations(x)):
        if isinstance(head, GpHead):
            head.fit_precision(h)
    return model


def train_sdn(model, data, cfg, weights=None):
    """Jointly train backbone, projectors and heads in place; returns ``(model, history)``."""
    weights = _check_weights(model, weights)
    if hasattr(data, "xy"):
        x, y = data.xy("train")
    else:
        x, y = (np.asarray(a) for a in data)
    history = run_training(SdnObjective(model, weights), np.asarray(x, dtype=np.float64), y, cfg)
    fit_heads(model, np.asarray(x, dtype=np.float64))
    return model, history


def exit_logits(model, x):
    """Eval-mode (variance-adjusted) logits of every exit from one backbone pass."""
    return model.forward(np.asarray(x, dtype=np.float64), "eval")


def exit_predictions(model, x, include_final=False, logits=None):
    logits = exit_logits(model, x) if logits is None else logits
    if not include_final:
        logits = logits[:-1]
    return np.stack([l.argmax(axis=1) for l in logits], axis=1)


def count_switches(preds):
    """Transitions between consecutive columns of an ``[n x exits]`` prediction matrix."""
    preds = np.asarray(preds)
    return (preds[:, 1:] != preds[:, :-1]).sum(axis=1)


def prediction_switches(model, x, include_final=False, logits=None):
    if model.n_ic < 2 and not include_final:
        raise UnsupportedConfigurationError("prediction switches need at least two internal classifiers")
    return count_switches(exit_predictions(model, x, include_final, logits))


def spectral_layers(model):
    return [l for l in iter_layers(model.backbone.layers) if getattr(l, "spectral_norm", None) is not None]


def as_network(model):
    """The final-exit path of ``model`` as a plain :class:`Network` (shares layers)."""
    return Network(list(model.backbone.layers) + [model.final_head])
