"""Synthetic datasets, split handling and the class-imbalance protocol."""

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CsvParseError, InvalidArgumentError, SchemaError

SPLITS = ("train", "validation", "test")

# guards floor() against products like 0.29 * 100 = 28.999999999999996
_FLOOR_EPS = 1e-9


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled points with a split tag and an OOD flag per row.

    Validation rows keep their labels in storage, but nothing downstream reads
    them: :meth:`validation_features` is the only accessor for that split.
    """

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    ood: np.ndarray
    n_classes: int = field(default=0)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = features.shape[0]
        split = np.asarray(self.split, dtype=object)
        ood = np.asarray(self.ood, dtype=bool)
        if labels.shape != (n,) or split.shape != (n,) or ood.shape != (n,):
            raise InvalidArgumentError("features, labels, split and ood must have equal row counts")
        bad = set(split.tolist()) - set(SPLITS)
        if bad:
            raise InvalidArgumentError(f"unknown split tags: {sorted(bad)}")
        k = self.n_classes or (int(labels.max()) + 1 if n else 0)
        if n and (labels.min() < 0 or labels.max() >= k):
            raise InvalidArgumentError(f"labels must lie in [0, {k})")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "split", _frozen(split))
        object.__setattr__(self, "ood", _frozen(ood))
        object.__setattr__(self, "n_classes", int(k))

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def mask(self, split):
        return self.split == split

    def xy(self, split):
        """Features and labels of a labeled split (``train`` or ``test``)."""
        if split == "validation":
            raise InvalidArgumentError("validation labels are not exposed; use validation_features()")
        m = self.mask(split)
        return self.features[m], self.labels[m]

    def validation_features(self):
        return self.features[self.mask("validation")]

    def replace(self, **changes):
        kw = dict(features=self.features, labels=self.labels, split=self.split,
                  ood=self.ood, n_classes=self.n_classes)
        kw.update(changes)
        return Dataset(**kw)

    def take(self, index):
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.split[index],
                       self.ood[index], self.n_classes)

    def counts(self, split):
        return np.bincount(self.labels[self.mask(split)], minlength=self.n_classes)


@dataclass(frozen=True)
class ImbalanceSpec:
    class_subset_A: frozenset = frozenset()
    class_subset_B: frozenset = frozenset()
    train_reduction: float = 0.8
    test_reduction: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "class_subset_A", frozenset(int(c) for c in self.class_subset_A))
        object.__setattr__(self, "class_subset_B", frozenset(int(c) for c in self.class_subset_B))
        if self.class_subset_A & self.class_subset_B:
            raise InvalidArgumentError("class subsets A and B must be disjoint")
        for name in ("train_reduction", "test_reduction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_severity(cls, n_classes, severity, train_reduction=0.8, test_reduction=0.9):
        """Equal-sized subsets covering ``severity`` of all classes.

        Severity 0 leaves the dataset untouched; severity 1 puts every class in
        either A (first half) or B (second half).
        """
        if not 0.0 <= severity <= 1.0:
            raise InvalidArgumentError(f"severity must lie in [0, 1], got {severity}")
        per_subset = int(math.floor(severity * n_classes / 2 + _FLOOR_EPS))
        a = range(per_subset)
        b = range(n_classes // 2, n_classes // 2 + per_subset)
        return cls(frozenset(a), frozenset(b), train_reduction, test_reduction)


def _all_train(features, labels, n_classes):
    n = len(labels)
    return Dataset(features, labels, np.full(n, "train", dtype=object), np.zeros(n, bool), n_classes)


def gen_spiral(n_per_class=100, n_classes=3, turns=1.0, noise_std=0.0, seed=0):
    """Spiral arms starting at the origin, one arm per class.

    Arm parameter ``t`` runs over ``[0, 1]``; radius is ``t`` and the angle is
    ``2*pi*turns*t`` plus the class offset ``2*pi*k/n_classes``.
    """
    if n_per_class <= 0 or n_classes <= 0:
        raise InvalidArgumentError("n_per_class and n_classes must be positive")
    if n_classes < 2:
        raise InvalidArgumentError("a spiral needs at least two classes")
    if turns <= 0:
        raise InvalidArgumentError("turns must be positive")
    if noise_std < 0:
        raise InvalidArgumentError("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_per_class)
    xs, ys = [], []
    for k in range(n_classes):
        theta = 2 * np.pi * turns * t + 2 * np.pi * k / n_classes
        xs.append(np.column_stack([t * np.cos(theta), t * np.sin(theta)]))
        ys.append(np.full(n_per_class, k))
    x = np.concatenate(xs)
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    return _all_train(x, np.concatenate(ys), n_classes)


def gen_gaussian_classes(n_per_class=50, n_classes=4, d=2, center_spread=10.0, cluster_std=0.5,
                         seed=0, min_separation=None, max_tries=1000):
    """Isotropic Gaussian clusters around centers drawn uniformly in a cube.

    Centers are resampled until every pair is more than ``min_separation``
    apart (default ``6 * cluster_std``; pass 0 to allow overlapping classes).
    """
    if n_per_class <= 0 or n_classes <= 0 or d <= 0:
        raise InvalidArgumentError("n_per_class, n_classes and d must be positive")
    if center_spread <= 0:
        raise InvalidArgumentError("center_spread must be positive")
    if cluster_std < 0:
        raise InvalidArgumentError("cluster_std must be nonnegative")
    rng = np.random.default_rng(seed)
    min_gap = 6.0 * cluster_std if min_separation is None else float(min_separation)
    centers = []
    for _ in range(n_classes):
        for _ in range(max_tries):
            c = rng.uniform(-center_spread, center_spread, size=d)
            if all(np.linalg.norm(c - o) > min_gap for o in centers):
                break
        else:
            raise InvalidArgumentError("could not place well-separated centers; increase center_spread")
        centers.append(c)
    centers = np.array(centers)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[labels] + rng.normal(0.0, 1.0, size=(len(labels), d)) * cluster_std
    return _all_train(x, labels, n_classes)


def split_test(ds, fraction, seed=0):
    """Stratified re-tag of ``fraction`` of each class's train rows as test."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    split = ds.split.copy()
    for k in range(ds.n_classes):
        idx = np.flatnonzero((ds.labels == k) & (split == "train"))
        n_test = int(math.floor(fraction * len(idx) + _FLOOR_EPS))
        split[rng.permutation(idx)[:n_test]] = "test"
    return ds.replace(split=split)


def apply_imbalance(ds, spec, seed=0):
    present = set(np.unique(ds.labels).tolist())
    missing = (spec.class_subset_A | spec.class_subset_B) - present
    if missing:
        raise InvalidArgumentError(f"classes {sorted(missing)} are not present in the dataset")
    rng = np.random.default_rng(seed)
    drop = []
    for split, classes, reduction in (("train", spec.class_subset_A, spec.train_reduction),
                                      ("test", spec.class_subset_B, spec.test_reduction)):
        for k in sorted(classes):
            idx = np.flatnonzero((ds.labels == k) & (ds.split == split))
            n_drop = int(math.floor(reduction * len(idx) + _FLOOR_EPS))
            drop.append(rng.choice(idx, size=n_drop, replace=False))
    if not drop:
        return ds
    keep = np.setdiff1d(np.arange(len(ds)), np.concatenate(drop))
    return ds.take(keep)


def split_validation(ds, fraction=0.1, seed=0):
    """Re-tag ``floor(fraction * n_train)`` train rows as validation.

    At least one train row always remains.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in the open interval (0, 1)")
    idx = np.flatnonzero(ds.mask("train"))
    if len(idx) == 0:
        raise InvalidArgumentError("training split is empty")
    n_val = min(int(math.floor(fraction * len(idx) + _FLOOR_EPS)), len(idx) - 1)
    rng = np.random.default_rng(seed)
    split = ds.split.copy()
    split[np.sort(rng.permutation(idx)[:n_val])] = "validation"
    return ds.replace(split=split)


def gen_ood_grid(bounds, resolution):
    """Row-major lattice over ``bounds`` (a sequence of ``(min, max)`` per axis)."""
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    if not bounds:
        raise InvalidArgumentError("bounds must cover at least one axis")
    res = [resolution] * len(bounds) if np.isscalar(resolution) else list(resolution)
    if len(res) != len(bounds):
        raise InvalidArgumentError("one resolution per axis required")
    if any(r < 2 for r in res):
        raise InvalidArgumentError("resolution must be at least 2 per axis")
    if any(lo >= hi for lo, hi in bounds):
        raise InvalidArgumentError("degenerate bounds: min must be below max on every axis")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res)]
    return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(bounds))


def sample_annulus(n, inner, outer, d=2, seed=0):
    """Uniform samples from the shell ``inner <= |x| <= outer`` in ``d`` dimensions."""
    if not 0 <= inner < outer:
        raise InvalidArgumentError("need 0 <= inner < outer")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # radius density proportional to r^(d-1)
    u = rng.uniform(size=n)
    radius = (inner ** d + u * (outer ** d - inner ** d)) ** (1.0 / d)
    return direction * radius[:, None]


def load_csv(path, label_column):
    """Read a headered CSV; every non-label column must be numeric."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise SchemaError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise SchemaError(f"{path}: label column {label_column!r} not found in header {header}")
    li = header.index(label_column)
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    mapping = {}
    feats, labels = [], []
    for rno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CsvParseError(f"{path}: row {rno} has {len(row)} cells, expected {len(header)}", rno)
        vec = []
        for ci, cell in enumerate(row):
            if ci == li:
                continue
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise CsvParseError(f"{path}: row {rno}, column {header[ci]!r}: "
                                    f"non-numeric value {cell!r}", rno, header[ci])
            vec.append(v)
        lab = row[li].strip()
        labels.append(mapping.setdefault(lab, len(mapping)))
        feats.append(vec)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(header) - 1)
    return _all_train(x, np.array(labels), len(mapping))


def to_csv(ds, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(ds.n_features)] + ["label", "split", "ood"])
        for x, y, s, o in zip(ds.features, ds.labels, ds.split, ds.ood):
            w.writerow([repr(float(v)) for v in x] + [int(y), s, int(o)])


def read_csv(path, n_classes=None):
    """Inverse of :func:`to_csv`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    if header[-3:] != ["label", "split", "ood"]:
        raise SchemaError(f"{path}: expected trailing columns label, split, ood")
    body = rows[1:]
    d = len(header) - 3
    x = np.array([[float(c) for c in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    return Dataset(x, np.array([int(r[d]) for r in body], dtype=np.int64),
                   np.array([r[d + 1] for r in body], dtype=object),
                   np.array([bool(int(r[d + 2])) for r in body]), n_classes or 0)
