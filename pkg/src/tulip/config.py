"""Experiment configuration: YAML loading, defaults and validation.

Errors carry the dotted path of the offending field, e.g.
``estimator.kind: unknown estimator 'duq'``.
"""

import copy
import hashlib
import inspect
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import datasets
from .estimators import ESTIMATORS
from .exceptions import ConfigError

GENERATORS = {"spiral": datasets.gen_spiral, "gaussian": datasets.gen_gaussian_classes}
OOD_KINDS = ("annulus", "box", "csv")
TRAIN_KEYS = ("optimizer", "learning_rate", "epochs", "batch_size", "lr_schedule")

DEFAULTS = {
    "dataset": {
        "generator": "spiral",
        "params": {},
        "path": None,
        "label_column": "label",
        "test_fraction": 0.2,
        "validation_fraction": 0.1,
        "imbalance": {"severity": 0.0, "train_reduction": 0.8, "test_reduction": 0.9},
    },
    "estimator": {"kind": "tulip", "params": {}},
    "train": {},
    "eval": {"ood": [{"kind": "annulus", "inner": 1.5, "outer": 3.0, "n": 500}], "ece_bins": 15},
    "surface": {
        "severities": [0.0, 0.5, 1.0],
        "n_bins": 10,
        "constrained": {"spectral_norm": 3.0},
        "unconstrained": {"spectral_norm": None},
    },
    "disagreement": {
        "bounds": [[-3.0, 3.0], [-3.0, 3.0]],
        "resolution": 101,
        "far_factor": 1.5,
        "ensemble": {"n_members": 10, "hidden": [64, 64, 64], "optimizer": "sgd", "learning_rate": 0.008,
                     "epochs": 400},
        "sdn": {"hidden": [64, 64, 64], "n_ic": 2, "optimizer": "adam", "learning_rate": 0.001, "epochs": 800},
    },
    "seeds": [0],
    "output_dir": "runs",
}


@dataclass
class ExperimentConfig:
    dataset: dict
    estimator: dict
    train: dict
    eval: dict
    surface: dict
    disagreement: dict
    seeds: list
    output_dir: str

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def estimator_params(self, seed, overrides=None):
        """Estimator params, then the train section, then ``overrides``; seed last."""
        params = dict(self.estimator["params"])
        params.update(self.train)
        params.update(overrides or {})
        params["random_state"] = int(seed)
        return params


# parameter maps whose keys are checked later against the estimator signature
_OPEN_MAPS = ("ensemble", "sdn")
_REPLACED_MAPS = ("params", "train", "constrained", "unconstrained")


def _merge(base, override, path):
    if not isinstance(override, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(override).__name__}")
    out = copy.deepcopy(base)
    for key, value in override.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(sub, "unknown field")
        if key in _OPEN_MAPS:
            if not isinstance(value, dict):
                raise ConfigError(sub, "expected a mapping")
            out[key].update(copy.deepcopy(value))
        elif isinstance(base[key], dict) and key not in _REPLACED_MAPS:
            out[key] = _merge(base[key], value, sub)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _number(value, path, lo=None, hi=None, integer=False, open_lo=False, open_hi=False):
    kinds = (int,) if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if lo is not None and (value < lo or (open_lo and value == lo)):
        raise ConfigError(path, f"must be {'>' if open_lo else '>='} {lo}, got {value!r}")
    if hi is not None and (value > hi or (open_hi and value == hi)):
        raise ConfigError(path, f"must be {'<' if open_hi else '<='} {hi}, got {value!r}")
    return value


def _check_keys(params, allowed, path):
    if not isinstance(params, dict):
        raise ConfigError(path, "expected a mapping")
    for key in params:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", f"unknown parameter; expected one of {sorted(allowed)}")


def _estimator_keys(kind):
    return set(ESTIMATORS[kind][0]().get_params()) - {"random_state"}


def _resolve(path_value, base_dir, field):
    p = Path(path_value)
    if not p.is_absolute():
        p = Path(base_dir) / p
    if not p.is_file():
        raise ConfigError(field, f"file not found: {p}")
    return str(p)


def _validate_dataset(ds, base_dir):
    gen = ds["generator"]
    if gen == "csv":
        if not ds["path"]:
            raise ConfigError("dataset.path", "required when generator is 'csv'")
        ds["path"] = _resolve(ds["path"], base_dir, "dataset.path")
        if ds["params"]:
            raise ConfigError("dataset.params", "not used with the csv generator")
    elif gen in GENERATORS:
        allowed = set(inspect.signature(GENERATORS[gen]).parameters) - {"seed", "max_tries"}
        _check_keys(ds["params"], allowed, "dataset.params")
    else:
        raise ConfigError("dataset.generator", f"unknown generator {gen!r}; expected spiral, gaussian or csv")
    _number(ds["test_fraction"], "dataset.test_fraction", 0, 1, open_lo=True, open_hi=True)
    # 0 keeps every non-test row for training; TULIP then holds out its own validation rows
    _number(ds["validation_fraction"], "dataset.validation_fraction", 0, 1, open_hi=True)
    imb = ds["imbalance"]
    _number(imb["severity"], "dataset.imbalance.severity", 0, 1)
    _number(imb["train_reduction"], "dataset.imbalance.train_reduction", 0, 1)
    _number(imb["test_reduction"], "dataset.imbalance.test_reduction", 0, 1)


def _validate_train(train):
    _check_keys(train, TRAIN_KEYS, "train")
    if "optimizer" in train and train["optimizer"] not in ("sgd", "adam"):
        raise ConfigError("train.optimizer", f"expected 'sgd' or 'adam', got {train['optimizer']!r}")
    if "learning_rate" in train:
        _number(train["learning_rate"], "train.learning_rate", 0)
    if "epochs" in train:
        _number(train["epochs"], "train.epochs", 0, integer=True)
    if "batch_size" in train:
        _number(train["batch_size"], "train.batch_size", 1, integer=True)
    epochs = train.get("epochs")
    for i, item in enumerate(train.get("lr_schedule", [])):
        path = f"train.lr_schedule[{i}]"
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(path, "expected [epoch, multiplier]")
        _number(item[0], path + "[0]", 0, epochs - 1 if epochs else None, integer=True)
        _number(item[1], path + "[1]", 0)


def _validate_ood(items, base_dir):
    if not isinstance(items, list) or not items:
        raise ConfigError("eval.ood", "expected a nonempty list of OOD sets")
    for i, item in enumerate(items):
        path = f"eval.ood[{i}]"
        if not isinstance(item, dict) or item.get("kind") not in OOD_KINDS:
            raise ConfigError(f"{path}.kind", f"expected one of {list(OOD_KINDS)}")
        kind = item["kind"]
        allowed = {"annulus": {"kind", "name", "inner", "outer", "n"},
                   "box": {"kind", "name", "low", "high", "n", "min_radius"},
                   "csv": {"kind", "name", "path", "label_column"}}[kind]
        _check_keys(item, allowed, path)
        if kind == "annulus":
            inner = _number(item.get("inner", 1.5), f"{path}.inner", 0)
            _number(item.get("outer", 3.0), f"{path}.outer", inner, open_lo=True)
            _number(item.get("n", 500), f"{path}.n", 1, integer=True)
        elif kind == "box":
            low = _number(item.get("low", -3.0), f"{path}.low")
            _number(item.get("high", 3.0), f"{path}.high", low, open_lo=True)
            _number(item.get("n", 500), f"{path}.n", 1, integer=True)
            _number(item.get("min_radius", 0.0), f"{path}.min_radius", 0)
        else:
            if "path" not in item:
                raise ConfigError(f"{path}.path", "required for csv OOD sets")
            item["path"] = _resolve(item["path"], base_dir, f"{path}.path")


def check_surface(cfg):
    """Surface overrides must be parameters of the configured estimator; checked only by the surface verb."""
    allowed = _estimator_keys(cfg.estimator["kind"])
    for key in ("constrained", "unconstrained"):
        _check_keys(cfg.surface[key], allowed, f"surface.{key}")


def validate(raw, base_dir="."):
    """Merge ``raw`` over the defaults and check every field; returns :class:`ExperimentConfig`."""
    if raw is None:
        raw = {}
    cfg = _merge(DEFAULTS, raw, "")
    _validate_dataset(cfg["dataset"], base_dir)

    est = cfg["estimator"]
    if est["kind"] not in ESTIMATORS:
        raise ConfigError("estimator.kind", f"unknown estimator {est['kind']!r}; expected one of {sorted(ESTIMATORS)}")
    _check_keys(est["params"], _estimator_keys(est["kind"]), "estimator.params")
    _validate_train(cfg["train"])

    ev = cfg["eval"]
    _validate_ood(ev["ood"], base_dir)
    _number(ev["ece_bins"], "eval.ece_bins", 1, integer=True)

    sf = cfg["surface"]
    if not isinstance(sf["severities"], list) or not sf["severities"]:
        raise ConfigError("surface.severities", "expected a nonempty list")
    for i, s in enumerate(sf["severities"]):
        _number(s, f"surface.severities[{i}]", 0, 1)
    _number(sf["n_bins"], "surface.n_bins", 1, integer=True)
    for key in ("constrained", "unconstrained"):
        if not isinstance(sf[key], dict):
            raise ConfigError(f"surface.{key}", "expected a mapping")

    dg = cfg["disagreement"]
    if not isinstance(dg["bounds"], list) or len(dg["bounds"]) != 2:
        raise ConfigError("disagreement.bounds", "expected two [min, max] pairs")
    for i, b in enumerate(dg["bounds"]):
        if not isinstance(b, list) or len(b) != 2:
            raise ConfigError(f"disagreement.bounds[{i}]", "expected [min, max]")
        _number(b[1], f"disagreement.bounds[{i}][1]", _number(b[0], f"disagreement.bounds[{i}][0]"),
                open_lo=True)
    _number(dg["resolution"], "disagreement.resolution", 2, integer=True)
    _number(dg["far_factor"], "disagreement.far_factor", 0, open_lo=True)
    _check_keys(dg["ensemble"], _estimator_keys("ensemble_total"), "disagreement.ensemble")
    _check_keys(dg["sdn"], _estimator_keys("tulip"), "disagreement.sdn")

    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a nonempty list of integers")
    for i, s in enumerate(seeds):
        _number(s, f"seeds[{i}]", 0, integer=True)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        raise ConfigError("output_dir", "expected a path string")
    return ExperimentConfig(**cfg)


def load(path):
    """Read and validate a YAML config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
    return validate(raw, path.parent)


def reference():
    """The fully defaulted config as YAML text."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
