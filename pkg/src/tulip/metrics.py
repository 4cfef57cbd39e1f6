"""Accuracy, AUROC, ECE and accuracy/count surfaces over (severity, uncertainty)."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import InvalidArgumentError


def accuracy(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise InvalidArgumentError("pred and truth must have equal length")
    if pred.size == 0:
        raise InvalidArgumentError("accuracy of an empty set is undefined")
    return float(np.mean(pred == truth))


def auroc(scores_id, scores_ood):
    """P(ood score > id score) + 0.5 P(tie), via average ranks (Mann-Whitney U)."""
    a = np.asarray(scores_id, dtype=np.float64).ravel()
    b = np.asarray(scores_ood, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("both score sets must be nonempty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def bin_index(values, n_bins, lo=0.0, hi=1.0):
    """Right-closed equal-width bins on ``[lo, hi]``: bin ``b`` is ``(e_b, e_{b+1}]``, ``lo`` goes to bin 0."""
    values = np.asarray(values, dtype=np.float64)
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    # b / n rather than linspace's b * (1 / n), so values exactly on an edge bin as written
    edges = lo + (hi - lo) * (np.arange(n_bins + 1) / n_bins)
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


def ece(confidences, correct, n_bins=15):
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.shape != corr.shape:
        raise InvalidArgumentError("confidences and correct must have equal length")
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be positive")
    if conf.size == 0:
        return 0.0
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=corr, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    return float(np.abs(acc_sum - conf_sum).sum() / conf.size)


@dataclass
class EvalReport:
    estimator: str
    accuracy: float
    auroc: float
    ece: float
    n_id: int
    n_ood: int
    auroc_per_ood: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, stem):
        """Write ``<stem>.json`` and ``<stem>.csv``; returns both paths."""
        jpath, cpath = f"{stem}.json", f"{stem}.csv"
        with open(jpath, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        with open(cpath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for key in ("accuracy", "auroc", "ece", "n_id", "n_ood"):
                w.writerow([key, repr(getattr(self, key))])
            for name, v in sorted(self.auroc_per_ood.items()):
                w.writerow([f"auroc[{name}]", repr(v)])
            for name, v in sorted(self.extra.items()):
                w.writerow([name, repr(v)])
        return jpath, cpath

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


@dataclass
class SurfaceGrid:
    severity_axis: np.ndarray
    uncertainty_bins: np.ndarray  # [S x (B+1)] per-severity edges
    accuracy_cells: np.ndarray  # NaN marks an empty cell
    count_cells: np.ndarray

    def rows(self):
        for i, sev in enumerate(self.severity_axis):
            for b in range(self.count_cells.shape[1]):
                yield {"severity": float(sev), "bin": b,
                       "bin_lo": float(self.uncertainty_bins[i, b]),
                       "bin_hi": float(self.uncertainty_bins[i, b + 1]),
                       "accuracy": float(self.accuracy_cells[i, b]),
                       "count": int(self.count_cells[i, b])}

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["severity", "bin", "bin_lo", "bin_hi", "accuracy", "count"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def to_json(self):
        return json.dumps({"severity_axis": self.severity_axis.tolist(),
                           "uncertainty_bins": self.uncertainty_bins.tolist(),
                           "accuracy_cells": [[None if np.isnan(v) else v for v in r]
                                              for r in self.accuracy_cells.tolist()],
                           "count_cells": self.count_cells.tolist()}, indent=2)


def surface_bins(severities, uncertainties, correct, n_bins=10):
    """Per-severity equal-width binning of uncertainty, with mean correctness and counts."""
    sev = np.asarray(severities, dtype=np.float64)
    unc = np.asarray(uncertainties, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if sev.size == 0:
        raise InvalidArgumentError("surface of an empty input is undefined")
    if not sev.shape == unc.shape == corr.shape:
        raise InvalidArgumentError("severities, uncertainties and correct must be aligned")
    axis = np.unique(sev)
    edges = np.zeros((len(axis), n_bins + 1))
    acc = np.full((len(axis), n_bins), np.nan)
    counts = np.zeros((len(axis), n_bins), dtype=np.int64)
    for i, s in enumerate(axis):
        m = sev == s
        lo, hi = unc[m].min(), unc[m].max()
        edges[i] = np.linspace(lo, hi, n_bins + 1)
        idx = bin_index(unc[m], n_bins, lo, hi)
        counts[i] = np.bincount(idx, minlength=n_bins)
        hits = np.bincount(idx, weights=corr[m], minlength=n_bins)
        nz = counts[i] > 0
        acc[i, nz] = hits[nz] / counts[i, nz]
    return SurfaceGrid(axis, edges, acc, counts)
