"""Dense network engine with hand-written backpropagation.

Layers share a small protocol:

* ``forward(x, train=False, rng=None, dropout=False)`` returns the output and,
  only when ``train`` is set, caches what ``backward`` needs.
* ``backward(grad_out)`` accumulates parameter gradients into ``layer.grads``
  and returns the gradient with respect to the layer input.
* ``params`` / ``grads`` are dicts of arrays updated in place by optimizers.

Eval-mode forward never mutates a layer, so a trained network can be shared
between threads for inference.
"""

import copy

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import InvalidArgumentError, ShapeError

ACTIVATIONS = ("relu", "identity")


def _check_width(x, n_in, what):
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ShapeError(f"{what} expects input of width {n_in}, got shape {x.shape}")


class DenseLayer:
    """Affine map followed by ``relu`` or ``identity``.

    ``spectral_norm`` is the coefficient ``c``; when set, :meth:`apply_spectral_norm`
    rescales the weights so their top singular value does not exceed ``c``.
    The bias is never normalized.
    """

    kind = "dense"

    def __init__(self, n_in, n_out, activation="relu", spectral_norm=None, power_iters=1,
                 rng=None, weights=None, bias=None):
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {activation!r}")
        if spectral_norm is not None and not spectral_norm > 0:
            raise InvalidArgumentError("spectral_norm coefficient must be positive")
        if power_iters < 1:
            raise InvalidArgumentError("power_iters must be positive")
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.activation = activation
        self.spectral_norm = None if spectral_norm is None or np.isinf(spectral_norm) else float(spectral_norm)
        self.power_iters = int(power_iters)
        if weights is None:
            # He-uniform for relu, LeCun-uniform otherwise
            limit = np.sqrt((6.0 if activation == "relu" else 3.0) / self.n_in)
            weights = rng.uniform(-limit, limit, size=(self.n_out, self.n_in))
        if bias is None:
            bias = np.zeros(self.n_out)
        self.params = {"weights": np.array(weights, dtype=np.float64),
                       "bias": np.array(bias, dtype=np.float64)}
        if self.params["weights"].shape != (self.n_out, self.n_in) or self.params["bias"].shape != (self.n_out,):
            raise ShapeError("weights must be [out x in] and bias [out]")
        u = rng.normal(size=self.n_out)
        self.cached_u = u / np.linalg.norm(u)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    @property
    def weights(self):
        return self.params["weights"]

    @property
    def bias(self):
        return self.params["bias"]

    def forward(self, x, train=False, rng=None, dropout=False):
        _check_width(x, self.n_in, "dense layer")
        z = x @ self.weights.T + self.bias
        out = np.maximum(z, 0.0) if self.activation == "relu" else z
        if train:
            self._cache = (x, z)
        return out

    def backward(self, grad_out):
        x, z = self._cache
        if self.activation == "relu":
            grad_out = grad_out * (z > 0)
        self.grads["weights"] += grad_out.T @ x
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.weights

    def top_singular_value(self, n_iters, tol=1e-10, max_iters=200):
        """Power-iteration estimate of the top singular value, warm-started from ``cached_u``.

        Runs at least ``n_iters`` iterations and keeps going until the estimate
        changes by less than ``tol`` (relative), capped at ``max_iters``.
        """
        w = self.weights
        u = self.cached_u
        sigma = prev = None
        for i in range(max(n_iters, max_iters)):
            v = w.T @ u
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return 0.0
            v /= nv
            u = w @ v
            sigma = np.linalg.norm(u)
            if sigma == 0.0:
                return 0.0
            u /= sigma
            if i + 1 >= n_iters and prev is not None and abs(sigma - prev) <= tol * sigma:
                break
            prev = sigma
        self.cached_u = u
        return float(sigma)

    def apply_spectral_norm(self, n_iters=None):
        if self.spectral_norm is None:
            return self
        sigma = self.top_singular_value(n_iters or self.power_iters)
        if sigma > self.spectral_norm:
            self.params["weights"] *= self.spectral_norm / sigma
        return self

    def sublayers(self):
        return []


class ResidualBlock:
    """``x + inner(x)``; inner layers must map width ``d`` back to ``d``."""

    kind = "residual"

    def __init__(self, inner):
        inner = list(inner)
        if not inner:
            raise InvalidArgumentError("residual block needs at least one inner layer")
        for a, b in zip(inner, inner[1:]):
            if a.n_out != b.n_in:
                raise ShapeError("inner layer widths do not chain")
        if inner[0].n_in != inner[-1].n_out:
            raise ShapeError("residual block input and output widths must match")
        self.inner = inner
        self.n_in = self.n_out = inner[0].n_in
        self.params, self.grads = {}, {}

    def forward(self, x, train=False, rng=None, dropout=False):
        h = x
        for layer in self.inner:
            h = layer.forward(h, train, rng, dropout)
        return x + h

    def backward(self, grad_out):
        g = grad_out
        for layer in reversed(self.inner):
            g = layer.backward(g)
        return grad_out + g

    def sublayers(self):
        return self.inner


class DropoutLayer:
    """Inverted dropout; active only when ``dropout=True`` is passed to forward."""

    kind = "dropout"

    def __init__(self, rate, width=None):
        if not 0.0 <= rate < 1.0:
            raise InvalidArgumentError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self.n_in = self.n_out = width
        self.params, self.grads = {}, {}
        self._mask = None

    def forward(self, x, train=False, rng=None, dropout=False):
        if not dropout or self.rate == 0.0:
            if train:
                self._mask = None
            return x
        if rng is None:
            raise InvalidArgumentError("active dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        if train:
            self._mask = mask
        return x * mask

    def backward(self, grad_out):
        return grad_out if self._mask is None else grad_out * self._mask

    def sublayers(self):
        return []


def iter_layers(layers):
    """Depth-first walk over layers and their nested sublayers."""
    for layer in layers:
        yield layer
        yield from iter_layers(layer.sublayers())


class Network:
    """Ordered layer stack exposing intermediate activations.

    Tap ``t`` is the activation after the first ``t`` layers (``0`` is the
    input itself), so a 3-layer MLP with taps ``(1, 2)`` exposes the outputs of
    its first and second layer.
    """

    def __init__(self, layers, tap_points=()):
        self.layers = list(layers)
        if not self.layers:
            raise InvalidArgumentError("network needs at least one layer")
        width = None
        for i, layer in enumerate(self.layers):
            if layer.n_in is None:
                continue
            if width is not None and layer.n_in != width:
                raise ShapeError(f"layer {i} expects width {layer.n_in}, previous layer produces {width}")
            width = layer.n_out
        tap_points = tuple(int(t) for t in tap_points)
        if any(b <= a for a, b in zip(tap_points, tap_points[1:])):
            raise InvalidArgumentError("tap_points must be strictly increasing")
        if tap_points and (tap_points[0] < 0 or tap_points[-1] > len(self.layers)):
            raise InvalidArgumentError(f"tap_points must lie in [0, {len(self.layers)}]")
        self.tap_points = tap_points

    @property
    def depth(self):
        return len(self.layers)

    @property
    def n_in(self):
        return next(l.n_in for l in self.layers if l.n_in is not None)

    @property
    def n_out(self):
        return next(l.n_out for l in reversed(self.layers) if l.n_out is not None)

    def width_at(self, tap):
        if tap == 0:
            return self.n_in
        return next(l.n_out for l in reversed(self.layers[:tap]) if l.n_out is not None)

    def forward(self, x, mode="eval", rng=None, dropout=None, taps=None):
        """Return ``(output, activations at each tap point)``."""
        if mode not in ("train", "eval"):
            raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        dropout = train if dropout is None else dropout
        taps = self.tap_points if taps is None else tuple(taps)
        h = np.asarray(x, dtype=np.float64)
        _check_width(h, self.n_in, "network")
        out_taps = [h] if taps and taps[0] == 0 else []
        for i, layer in enumerate(self.layers, start=1):
            h = layer.forward(h, train, rng, dropout)
            if i in taps:
                out_taps.append(h)
        return h, out_taps

    def activations(self, x):
        """Eval-mode output of every layer, ``[h_1, ..., h_depth]``."""
        _, acts = self.forward(x, "eval", taps=range(1, self.depth + 1))
        return acts

    def backward(self, grad_out, tap_grads=None):
        """Backpropagate ``grad_out`` plus optional gradients injected at taps.

        ``tap_grads`` maps a tap index to the gradient of the loss with respect
        to that activation. Requires a preceding ``forward(mode="train")``.
        """
        tap_grads = tap_grads or {}
        g = grad_out
        for i in range(self.depth, 0, -1):
            if i in tap_grads:
                g = g + tap_grads[i]
            g = self.layers[i - 1].backward(g)
        if 0 in tap_grads:
            g = g + tap_grads[0]
        return g

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(_named(layer, f"{prefix}{i}"))
        return out

    def zero_grad(self):
        for _, p, g in self.named_parameters():
            g.fill(0.0)

    def apply_spectral_norm(self):
        for layer in iter_layers(self.layers):
            if getattr(layer, "spectral_norm", None) is not None:
                layer.apply_spectral_norm()

    def copy(self):
        return copy.deepcopy(self)


def _named(layer, prefix):
    out = [(f"{prefix}.{k}", layer.params[k], layer.grads[k]) for k in layer.params]
    for j, sub in enumerate(layer.sublayers()):
        out.extend(_named(sub, f"{prefix}.{j}"))
    return out


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    targets = np.asarray(targets)
    n, k = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets must have shape ({n},), got {targets.shape}")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise InvalidArgumentError(f"targets must be class ids in [0, {k})")
    logp = log_softmax(logits, axis=1)
    loss = -logp[np.arange(n), targets].mean()
    grad = softmax(logits, axis=1)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def forward(net, x, mode="eval"):
    return net.forward(x, mode)


def backward(net, x, targets, loss=cross_entropy):
    """Gradients of ``loss`` at ``x`` for every parameter, keyed by parameter name."""
    net.zero_grad()
    out, _ = net.forward(x, "train", dropout=False)
    value, g = loss(out, targets)
    net.backward(g)
    return {name: grad.copy() for name, _, grad in net.named_parameters()}


def spectral_normalize(layer, n_iters=50):
    """Copy of ``layer`` rescaled so its top singular value is at most the coefficient."""
    if layer.spectral_norm is None:
        raise InvalidArgumentError("layer has no spectral_norm coefficient configured")
    out = copy.deepcopy(layer)
    return out.apply_spectral_norm(n_iters)


def mlp(n_in, widths, n_out=None, activation="relu", spectral_norm=None, dropout=None, seed=0):
    """Plain relu MLP; ``n_out`` adds an identity output layer (logits).

    A ``dropout`` rate (0 included) inserts a dropout layer after every hidden layer.
    """
    rng = np.random.default_rng(seed)
    layers, prev = [], n_in
    for w in widths:
        layers.append(DenseLayer(prev, w, activation, spectral_norm, rng=rng))
        if dropout is not None:
            layers.append(DropoutLayer(dropout, w))
        prev = w
    if n_out is not None:
        layers.append(DenseLayer(prev, n_out, "identity", spectral_norm, rng=rng))
    return Network(layers)


def residual_mlp(n_in, width, n_blocks, n_out=None, spectral_norm=None, seed=0):
    """Input projection to ``width`` then ``n_blocks`` residual blocks of two dense layers."""
    rng = np.random.default_rng(seed)
    layers = [DenseLayer(n_in, width, "relu", spectral_norm, rng=rng)]
    for _ in range(n_blocks):
        layers.append(ResidualBlock([DenseLayer(width, width, "relu", spectral_norm, rng=rng),
                                     DenseLayer(width, width, "identity", spectral_norm, rng=rng)]))
    if n_out is not None:
        layers.append(DenseLayer(width, n_out, "identity", spectral_norm, rng=rng))
    return Network(layers)
