"""Distance-preservation diagnostics over a network's layer stack.

Layer ``l`` here is the output of the ``l``-th network layer (``h_0`` is the
first layer's output); input-space distances are reported separately.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .exceptions import DegenerateFitError, InvalidArgumentError, ShapeError

COLLAPSE_EPS = 1e-12


def _pairs(pairs):
    x1, x2 = (np.asarray(p, dtype=np.float64) for p in pairs)
    if x1.shape != x2.shape or x1.ndim != 2:
        raise ShapeError("pair arrays must share shape [n_pairs x d]")
    return x1, x2


def input_distances(pairs):
    x1, x2 = _pairs(pairs)
    return np.linalg.norm(x1 - x2, axis=1)


def layer_distances(net, pairs, metric="euclidean"):
    """``[n_pairs x depth]`` Euclidean distances between paired layer outputs."""
    if metric != "euclidean":
        raise InvalidArgumentError(f"unsupported metric {metric!r}")
    x1, x2 = _pairs(pairs)
    a1, a2 = net.activations(x1), net.activations(x2)
    return np.column_stack([np.linalg.norm(h1 - h2, axis=1) for h1, h2 in zip(a1, a2)])


@dataclass
class DistortionProfile:
    per_layer_rho: np.ndarray
    pair_input_distances: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["pair", "layer", "rho"])
            for i, row in enumerate(self.per_layer_rho):
                for l, rho in enumerate(row):
                    w.writerow([i, l, repr(float(rho))])


def distortion_from_distances(distances, d_x, eps=COLLAPSE_EPS):
    """Ratios of consecutive distances, with 1 wherever the previous stage collapsed the pair."""
    full = np.column_stack([d_x, distances])
    prev, cur = full[:, :-1], full[:, 1:]
    ok = prev > eps
    rho = np.ones_like(cur)
    rho[ok] = cur[ok] / prev[ok]
    return rho


def distortion(net, pairs):
    d_x = input_distances(pairs)
    return DistortionProfile(distortion_from_distances(layer_distances(net, pairs), d_x), d_x)


@dataclass
class PreservationFit:
    r: np.ndarray
    constant_C: float
    residual: float


def fit_preservation_weights(distances, d_x, nonnegative=True):
    """Weights ``r`` minimizing ``|D r - d_x|``; nonnegative least squares by default."""
    D = np.asarray(distances, dtype=np.float64)
    d_x = np.asarray(d_x, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != d_x.shape[0]:
        raise ShapeError("distances must be [n_pairs x layers] aligned with d_x")
    if not np.any(D):
        raise DegenerateFitError("all layer distances are zero")
    if nonnegative:
        r, _ = nnls(D, d_x)
    else:
        r = np.linalg.lstsq(D, d_x, rcond=None)[0]
    fitted = D @ r
    ok = d_x > COLLAPSE_EPS
    c = float(np.mean(fitted[ok] / d_x[ok])) if ok.any() else float("nan")
    residual = float(np.sqrt(np.mean((fitted - d_x) ** 2)))
    return PreservationFit(r, c, residual)


def collapse_resistance(net, pairs, layer=0, epsilon=1e-6):
    """Fraction of pairs whose distance at ``layer`` exceeds ``epsilon * d_X``."""
    if not 0 <= layer < net.depth:
        raise InvalidArgumentError(f"layer must lie in [0, {net.depth})")
    d = layer_distances(net, pairs)[:, layer]
    return float(np.mean(d > epsilon * input_distances(pairs)))
