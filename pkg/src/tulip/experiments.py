"""Config-driven experiment drivers behind the command line verbs.

Each driver loops over seeds (optionally on a thread pool), writes everything
for one seed under ``<output>/seed_<s>/`` and finishes with a single
``manifest.json`` written by the coordinating thread. A failing seed is
recorded in the manifest and does not stop the others.
"""

import csv
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__
from .datasets import (ImbalanceSpec, apply_imbalance, gen_ood_grid, load_csv, sample_annulus, split_test,
                       split_validation)
from .config import GENERATORS, check_surface
from .estimators import DeepEnsembleClassifier, TulipClassifier, make_estimator
from .exceptions import UnsupportedConfigurationError
from .io import save_combination_head
from .metrics import EvalReport, accuracy, auroc, ece, surface_bins

log = logging.getLogger(__name__)

SUMMARY_METRICS = ("accuracy", "auroc", "ece")


def build_dataset(cfg, seed, severity=None):
    """Generate (or load), split into train/test, apply imbalance, then carve out validation rows (if any)."""
    ds_cfg = cfg.dataset
    if ds_cfg["generator"] == "csv":
        ds = load_csv(ds_cfg["path"], ds_cfg["label_column"])
    else:
        ds = GENERATORS[ds_cfg["generator"]](**ds_cfg["params"], seed=seed)
    ds = split_test(ds, ds_cfg["test_fraction"], seed)
    imb = ds_cfg["imbalance"]
    sev = imb["severity"] if severity is None else severity
    spec = ImbalanceSpec.from_severity(ds.n_classes, sev, imb["train_reduction"], imb["test_reduction"])
    ds = apply_imbalance(ds, spec, seed)
    if ds_cfg["validation_fraction"] == 0:
        return ds
    return split_validation(ds, ds_cfg["validation_fraction"], seed)


def ood_sets(cfg, seed, d):
    """``{name: matrix}`` of OOD inputs drawn per the eval section."""
    out = {}
    for i, item in enumerate(cfg.eval["ood"]):
        name = item.get("name", f"{item['kind']}{i}")
        rng_seed = np.random.SeedSequence([seed, 7, i])
        if item["kind"] == "annulus":
            out[name] = sample_annulus(item.get("n", 500), item.get("inner", 1.5), item.get("outer", 3.0), d,
                                       rng_seed)
        elif item["kind"] == "box":
            out[name] = _sample_box(item, d, np.random.default_rng(rng_seed))
        else:
            out[name] = _read_matrix(item["path"], item.get("label_column"))
            if out[name].shape[1] != d:
                raise UnsupportedConfigurationError(f"OOD set {name!r} has {out[name].shape[1]} columns, need {d}")
    return out


def _sample_box(item, d, rng):
    n, lo, hi = item.get("n", 500), item.get("low", -3.0), item.get("high", 3.0)
    min_r = item.get("min_radius", 0.0)
    pts = np.zeros((0, d))
    for _ in range(1000):
        cand = rng.uniform(lo, hi, size=(n, d))
        pts = np.vstack([pts, cand[np.linalg.norm(cand, axis=1) >= min_r]])
        if len(pts) >= n:
            return pts[:n]
    raise UnsupportedConfigurationError("box OOD set: min_radius excludes almost the whole box")


def _read_matrix(path, label_column=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    keep = [j for j, h in enumerate(header) if h != label_column]
    return np.array([[float(r[j]) for j in keep] for r in body], dtype=np.float64)


def evaluate(est, kind, ds, ood, ece_bins=15):
    """EvalReport of a fitted estimator on the test split against every OOD set."""
    x_test, y_test = ds.xy("test")
    if kind == "tulip":
        pred, u_id = est.predict_with_uncertainty(x_test)
    else:
        pred, u_id = est.predict(x_test), est.uncertainty(x_test)
    conf = est.predict_proba(x_test).max(axis=1)
    per_ood, extra = {}, {"mean_uncertainty_id": float(np.mean(u_id))}
    for name, x_ood in ood.items():
        u_ood = est.uncertainty(x_ood)
        per_ood[name] = auroc(u_id, u_ood)
        extra[f"mean_uncertainty[{name}]"] = float(np.mean(u_ood))
    if kind == "tulip":
        extra["disagreement_id"] = float(np.mean(est.disagreement(x_test)))
        extra["n_s"] = int(est.head_.n_s)
        extra["fallback_equal"] = bool(est.head_.fallback_equal)
        for i, r in enumerate(est.head_.r):
            extra[f"r{i + 1}"] = float(r)
    elif kind.startswith("ensemble"):
        extra["disagreement_id"] = float(np.mean(est.scores(x_test)[1]))
    return EvalReport(kind, accuracy(pred, y_test), float(np.mean(list(per_ood.values()))),
                      ece(conf, pred == y_test, ece_bins), len(x_test), sum(len(v) for v in ood.values()),
                      per_ood, extra)


def fit_estimator(kind, params, ds):
    est = make_estimator(kind, **params)
    x, y = ds.xy("train")
    if kind == "tulip":
        x_val = ds.validation_features()
        return est.fit(x, y, X_val=x_val if len(x_val) else None)
    return est.fit(x, y)


def _versions():
    return {"tulip": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _map_seeds(fn, seeds, threads):
    """Run ``fn(seed)`` per seed; failures become ``{"status": "failed"}`` records."""

    def guarded(seed):
        try:
            return {"seed": seed, "status": "ok", **fn(seed)}
        except Exception as exc:  # isolate the seed; reported in the manifest
            log.error("seed %s failed: %s: %s", seed, type(exc).__name__, exc)
            return {"seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(guarded, seeds))
    return [guarded(s) for s in seeds]


def _write_manifest(out, verb, cfg, entries, extra, t0):
    manifest = {"verb": verb, "config_hash": cfg.digest(), "config": cfg.to_dict(), "seeds": entries,
                **extra, "wall_clock_seconds": time.time() - t0, "versions": _versions()}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def summarize(reports):
    """``{metric: {"mean", "std", "n"}}`` over reports (population std)."""
    values = {}
    for rep in reports:
        for key in SUMMARY_METRICS:
            values.setdefault(key, []).append(getattr(rep, key))
        for name, v in rep.auroc_per_ood.items():
            values.setdefault(f"auroc[{name}]", []).append(v)
    return {k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)} for k, v in values.items()}


def run(cfg, output=None, seeds=None, threads=1):
    """Train, fit the combination head (TULIP only) and evaluate once per seed."""
    t0 = time.time()
    out = Path(output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.estimator["kind"]

    def one(seed):
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        ds = build_dataset(cfg, seed)
        est = fit_estimator(kind, cfg.estimator_params(seed), ds)
        report = evaluate(est, kind, ds, ood_sets(cfg, seed, ds.n_features), cfg.eval["ece_bins"])
        jpath, cpath = report.write(seed_dir / "report")
        files = {"report_json": str(Path(jpath).relative_to(out)), "report_csv": str(Path(cpath).relative_to(out))}
        if kind == "tulip":
            save_combination_head(est.head_, seed_dir / "combination_head.json")
            files["combination_head"] = str((seed_dir / "combination_head.json").relative_to(out))
        log.info("seed %s: accuracy %.4f auroc %.4f", seed, report.accuracy, report.auroc)
        return {**files, "_report": report}

    entries = _map_seeds(one, list(seeds or cfg.seeds), threads)
    reports = [e.pop("_report") for e in entries if e["status"] == "ok"]
    summary = summarize(reports)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(out / "summary.csv", ["metric", "mean", "std", "n_seeds"],
               [[k, v["mean"], v["std"], v["n"]] for k, v in sorted(summary.items())])
    return _write_manifest(out, "run", cfg, entries, {"summary_json": "summary.json", "summary_csv": "summary.csv"},
                           t0)


def surface(cfg, output=None, seeds=None, threads=1):
    """Severity sweep for a constrained and an unconstrained variant of the configured estimator."""
    check_surface(cfg)
    t0 = time.time()
    out = Path(output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.estimator["kind"]
    sf = cfg.surface
    models = {"constrained": sf["constrained"], "unconstrained": sf["unconstrained"]}

    def one(seed):
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        collected = {m: ([], [], []) for m in models}
        acc_rows, files = [], {}
        for sev in sf["severities"]:
            ds = build_dataset(cfg, seed, severity=sev)
            x_test, y_test = ds.xy("test")
            for name, overrides in models.items():
                est = fit_estimator(kind, cfg.estimator_params(seed, overrides), ds)
                pred = est.predict(x_test)
                u = est.uncertainty(x_test)
                sev_col, u_col, c_col = collected[name]
                sev_col.extend([sev] * len(u))
                u_col.extend(u)
                c_col.extend(pred == y_test)
                acc_rows.append([float(sev), name, accuracy(pred, y_test), int(len(ds.xy("train")[1])),
                                 int(len(y_test))])
                log.info("seed %s severity %s %s: accuracy %.4f", seed, sev, name, acc_rows[-1][2])
        for name, (s, u, c) in collected.items():
            grid = surface_bins(s, u, c, sf["n_bins"])
            grid.to_csv(seed_dir / f"surface_{name}.csv")
            (seed_dir / f"surface_{name}.json").write_text(grid.to_json() + "\n", encoding="utf-8")
            files[f"surface_{name}_csv"] = f"seed_{seed}/surface_{name}.csv"
            files[f"surface_{name}_json"] = f"seed_{seed}/surface_{name}.json"
        _write_csv(seed_dir / "severity_accuracy.csv", ["severity", "model", "accuracy", "n_train", "n_test"],
                   acc_rows)
        files["severity_accuracy"] = f"seed_{seed}/severity_accuracy.csv"
        return {**files, "_acc": acc_rows}

    entries = _map_seeds(one, list(seeds or cfg.seeds), threads)
    table = {}
    for e in entries:
        for sev, name, acc, _, _ in e.pop("_acc", []):
            table.setdefault((sev, name), []).append(acc)
    rows = []
    for sev in sf["severities"]:
        c, u = table.get((float(sev), "constrained"), []), table.get((float(sev), "unconstrained"), [])
        if not c or len(c) != len(u):
            continue
        diff = np.array(c) - np.array(u)
        rows.append([float(sev), float(np.mean(c)), float(np.std(c)), float(np.mean(u)), float(np.std(u)),
                     float(np.mean(diff)), float(np.std(diff)), len(c)])
    _write_csv(out / "severity_summary.csv",
               ["severity", "constrained_mean", "constrained_std", "unconstrained_mean", "unconstrained_std",
                "diff_mean", "diff_std", "n_seeds"], rows)
    return _write_manifest(out, "surface", cfg, entries, {"summary_csv": "severity_summary.csv"}, t0)


def far_field_fraction(points, scores, data_radius, factor=1.5):
    """Share of points beyond ``factor * data_radius`` scoring above half the map maximum."""
    far = np.linalg.norm(points, axis=1) > factor * data_radius
    if not far.any():
        raise UnsupportedConfigurationError("grid has no points in the far field")
    return float(np.mean(scores[far] > 0.5 * scores.max()))


def disagreement_map(cfg, output=None, seeds=None, threads=1):
    """Ensemble vs. inter-exit disagreement on a 2-D lattice; one CSV per estimator and seed."""
    t0 = time.time()
    out = Path(output or cfg.output_dir)
    seeds = list(seeds or cfg.seeds)
    dg = cfg.disagreement
    probe = build_dataset(cfg, seeds[0])
    if probe.n_features != 2:
        raise UnsupportedConfigurationError(f"disagreement maps need 2-D inputs, dataset has {probe.n_features}")
    out.mkdir(parents=True, exist_ok=True)
    grid = gen_ood_grid(dg["bounds"], dg["resolution"])

    def one(seed):
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        ds = build_dataset(cfg, seed)
        x, y = ds.xy("train")
        radius = float(np.linalg.norm(x, axis=1).max())
        ens = DeepEnsembleClassifier(**{**dg["ensemble"], "random_state": seed}).fit(x, y)
        sdn = TulipClassifier(**{**dg["sdn"], "random_state": seed}).fit(x, y, X_val=ds.validation_features())
        maps = {"ensemble": ens.scores(grid), "sdn": sdn.exit_scores(grid, include_final=False)}
        files, summary = {}, {"data_radius": radius, "far_factor": dg["far_factor"]}
        for name, (total, dis) in maps.items():
            _write_csv(seed_dir / f"disagreement_{name}.csv", ["x0", "x1", "total", "disagreement"],
                       [[float(p[0]), float(p[1]), float(t), float(d)] for p, t, d in zip(grid, total, dis)])
            files[f"disagreement_{name}"] = f"seed_{seed}/disagreement_{name}.csv"
            summary[f"far_fraction_{name}"] = far_field_fraction(grid, dis, radius, dg["far_factor"])
            summary[f"max_disagreement_{name}"] = float(dis.max())
        (seed_dir / "disagreement_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                            encoding="utf-8")
        files["summary"] = f"seed_{seed}/disagreement_summary.json"
        log.info("seed %s: far-field fraction ensemble %.3f sdn %.3f", seed, summary["far_fraction_ensemble"],
                 summary["far_fraction_sdn"])
        return files

    entries = _map_seeds(one, seeds, threads)
    return _write_manifest(out, "disagreement-map", cfg, entries, {"grid_points": int(len(grid))}, t0)
