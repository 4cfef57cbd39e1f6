"""Weight files: ``.npz`` archives carrying a JSON layer manifest.

Arrays are stored as raw float64, so a save/load round trip is bit-exact.
"""

import json
from pathlib import Path

import numpy as np

from .baselines import Ensemble
from .combiner import CombinationHead
from .exceptions import SchemaError
from .gp import GpHead
from .nn import DenseLayer, DropoutLayer, Network, ResidualBlock
from .sdn import InternalClassifier, SdnModel

FORMAT_VERSION = 1


def _dump_layer(layer, key, arrays):
    if isinstance(layer, DenseLayer):
        arrays[f"{key}.weights"] = layer.weights
        arrays[f"{key}.bias"] = layer.bias
        arrays[f"{key}.cached_u"] = layer.cached_u
        return {"kind": "dense", "key": key, "n_in": layer.n_in, "n_out": layer.n_out,
                "activation": layer.activation, "spectral_norm": layer.spectral_norm,
                "power_iters": layer.power_iters}
    if isinstance(layer, ResidualBlock):
        return {"kind": "residual",
                "inner": [_dump_layer(l, f"{key}.{j}", arrays) for j, l in enumerate(layer.inner)]}
    if isinstance(layer, DropoutLayer):
        return {"kind": "dropout", "rate": layer.rate, "width": layer.n_in}
    if isinstance(layer, GpHead):
        for name in ("rff_weights", "rff_phase", "beta", "precision", "covariance"):
            arrays[f"{key}.{name}"] = getattr(layer, name) if name != "beta" else layer.beta
        return {"kind": "gp", "key": key, "n_in": layer.n_in, "n_classes": layer.n_out,
                "n_features": layer.n_features, "length_scale": layer.length_scale,
                "ridge": layer.ridge, "mean_field_lambda": layer.mean_field_lambda,
                "mean_field": layer.mean_field}
    raise SchemaError(f"cannot serialize layer of type {type(layer).__name__}")


def _load_layer(spec, arrays):
    kind = spec["kind"]
    if kind == "dense":
        k = spec["key"]
        layer = DenseLayer(spec["n_in"], spec["n_out"], spec["activation"], spec["spectral_norm"],
                           spec["power_iters"], weights=arrays[f"{k}.weights"], bias=arrays[f"{k}.bias"])
        layer.cached_u = np.array(arrays[f"{k}.cached_u"])
        return layer
    if kind == "residual":
        return ResidualBlock([_load_layer(s, arrays) for s in spec["inner"]])
    if kind == "dropout":
        return DropoutLayer(spec["rate"], spec["width"])
    if kind == "gp":
        k = spec["key"]
        head = GpHead.__new__(GpHead)
        head.n_in, head.n_out = spec["n_in"], spec["n_classes"]
        head.n_features = spec["n_features"]
        head.length_scale, head.ridge = spec["length_scale"], spec["ridge"]
        head.mean_field_lambda, head.mean_field = spec["mean_field_lambda"], spec["mean_field"]
        head.rff_weights = np.array(arrays[f"{k}.rff_weights"])
        head.rff_phase = np.array(arrays[f"{k}.rff_phase"])
        head.params = {"beta": np.array(arrays[f"{k}.beta"])}
        head.grads = {"beta": np.zeros_like(head.params["beta"])}
        head.precision = np.array(arrays[f"{k}.precision"])
        head.covariance = np.array(arrays[f"{k}.covariance"])
        head._cache = None
        return head
    raise SchemaError(f"unknown layer kind {kind!r}")


def _write(path, manifest, arrays):
    manifest = dict(manifest, version=FORMAT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **arrays)


def _read(path, expected):
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    if "__manifest__" not in arrays:
        raise SchemaError(f"{path}: missing manifest")
    manifest = json.loads(str(arrays.pop("__manifest__")))
    if manifest.get("format") != expected:
        raise SchemaError(f"{path}: expected format {expected!r}, found {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported version {manifest.get('version')}")
    return manifest, arrays


def save_network(net, path):
    arrays = {}
    layers = [_dump_layer(l, f"L{i}", arrays) for i, l in enumerate(net.layers)]
    _write(path, {"format": "tulip-network", "layers": layers, "tap_points": list(net.tap_points)}, arrays)


def load_network(path):
    manifest, arrays = _read(path, "tulip-network")
    return Network([_load_layer(s, arrays) for s in manifest["layers"]], manifest["tap_points"])


def save_sdn(model, path):
    arrays = {}
    backbone = [_dump_layer(l, f"B{i}", arrays) for i, l in enumerate(model.backbone.layers)]
    ics = [{"tap_index": ic.tap_index,
            "projector": _dump_layer(ic.projector, f"IC{i}.proj", arrays),
            "head": _dump_layer(ic.head, f"IC{i}.head", arrays)} for i, ic in enumerate(model.ics)]
    final = _dump_layer(model.final_head, "F", arrays)
    _write(path, {"format": "tulip-sdn", "backbone": backbone, "ics": ics, "final_head": final}, arrays)


def load_sdn(path):
    manifest, arrays = _read(path, "tulip-sdn")
    backbone = Network([_load_layer(s, arrays) for s in manifest["backbone"]])
    ics = [InternalClassifier(s["tap_index"], _load_layer(s["projector"], arrays), _load_layer(s["head"], arrays))
           for s in manifest["ics"]]
    return SdnModel(backbone, ics, _load_layer(manifest["final_head"], arrays))


def save_ensemble(ens, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(ens.members):
        name = f"member_{i:03d}.npz"
        save_network(m, directory / name)
        files.append(name)
    (directory / "manifest.json").write_text(
        json.dumps({"format": "tulip-ensemble", "version": FORMAT_VERSION, "members": files}, indent=2))


def load_ensemble(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "tulip-ensemble":
        raise SchemaError(f"{directory}: not an ensemble directory")
    return Ensemble([load_network(directory / f) for f in manifest["members"]])


def save_combination_head(head, path):
    Path(path).write_text(head.to_json() + "\n")


def load_combination_head(path):
    return CombinationHead.from_json(Path(path).read_text())
