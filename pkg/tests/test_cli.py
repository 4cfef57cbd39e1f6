import csv
import json

import numpy as np
import pytest
import yaml

from tulip import experiments
from tulip.cli import main
from tulip.config import load, validate
from tulip.exceptions import ConfigError

QUICK = {
    "dataset": {"generator": "spiral", "params": {"n_per_class": 30, "n_classes": 3, "noise_std": 0.05}},
    "estimator": {"kind": "tulip", "params": {"hidden": [8, 8, 8]}},
    "train": {"learning_rate": 0.01, "epochs": 5},
    "surface": {"severities": [0.0, 1.0], "n_bins": 4, "constrained": {"spectral_norm": 1.0}},
    "disagreement": {"resolution": 5, "ensemble": {"n_members": 2, "hidden": [8], "epochs": 2},
                     "sdn": {"hidden": [8, 8, 8], "epochs": 2}},
    "seeds": [0, 1],
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return str(path)


def _with(**sections):
    cfg = json.loads(json.dumps(QUICK))
    cfg.update(sections)
    return cfg


class TestValidateConfig:
    def test_ok(self, tmp_path, capsys):
        assert main(["validate-config", "--config", _write(tmp_path, QUICK)]) == 0
        assert capsys.readouterr().out.startswith("ok ")

    def test_print_roundtrip(self, tmp_path, capsys):
        path = _write(tmp_path, QUICK)
        assert main(["validate-config", "--config", path, "--print"]) == 0
        resolved = yaml.safe_load(capsys.readouterr().out)
        assert validate(resolved).digest() == load(path).digest()

    def test_unknown_estimator(self, tmp_path, capsys):
        path = _write(tmp_path, _with(estimator={"kind": "duq"}))
        assert main(["run", "--config", path, "--output", str(tmp_path / "o")]) == 1
        assert "estimator.kind" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    @pytest.mark.parametrize("raw, field", [
        ({"datset": {}}, "datset"),
        ({"train": {"epochs": -1}}, "train.epochs"),
        ({"train": {"lr": 0.1}}, "train.lr"),
        ({"estimator": {"kind": "tulip", "params": {"n_ics": 2}}}, "estimator.params.n_ics"),
        ({"seeds": [1, 1]}, "seeds"),
        ({"eval": {"ood": [{"kind": "sphere"}]}}, "eval.ood[0].kind"),
        ({"dataset": {"generator": "csv"}}, "dataset.path"),
        ({"dataset": {"test_fraction": 1.0}}, "dataset.test_fraction"),
    ])
    def test_field_errors(self, raw, field):
        with pytest.raises(ConfigError) as exc:
            validate(raw)
        assert exc.value.path == field

    def test_missing_file(self, tmp_path):
        assert main(["validate-config", "--config", str(tmp_path / "nope.yaml")]) == 1

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("dataset: [unclosed", encoding="utf-8")
        assert main(["validate-config", "--config", str(path)]) == 1

    def test_usage_errors(self, tmp_path):
        path = _write(tmp_path, QUICK)
        assert main(["run", "--config", path, "--seeds", "a,b"]) == 1
        assert main(["run", "--config", path, "--threads", "0"]) == 1
        assert main(["frobnicate", "--config", path]) == 1

    def test_digest_stable(self, tmp_path):
        assert load(_write(tmp_path, QUICK)).digest() == load(_write(tmp_path, QUICK, "b.yaml")).digest()


class TestRun:
    def test_outputs_and_determinism(self, tmp_path):
        path = _write(tmp_path, QUICK)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", path, "--output", str(a)]) == 0
        assert main(["run", "--config", path, "--output", str(b), "--threads", "2"]) == 0
        for seed in (0, 1):
            for name in ("report.json", "report.csv", "combination_head.json"):
                assert (a / f"seed_{seed}" / name).read_bytes() == (b / f"seed_{seed}" / name).read_bytes()
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["verb"] == "run"
        assert manifest["config_hash"] == load(path).digest()
        assert [e["seed"] for e in manifest["seeds"]] == [0, 1]
        assert all(e["status"] == "ok" for e in manifest["seeds"])
        assert {"numpy", "python"} <= set(manifest["versions"])

    def test_summary_recomputes(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, QUICK), "--output", str(out)]) == 0
        reports = [json.loads((out / f"seed_{s}" / "report.json").read_text()) for s in (0, 1)]
        summary = json.loads((out / "summary.json").read_text())
        for metric in ("accuracy", "auroc", "ece"):
            vals = np.array([r[metric] for r in reports])
            assert abs(summary[metric]["mean"] - vals.mean()) < 1e-12
            assert abs(summary[metric]["std"] - vals.std()) < 1e-12

    def test_seed_override(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, QUICK), "--output", str(out), "--seeds", "3"]) == 0
        assert sorted(p.name for p in out.glob("seed_*")) == ["seed_3"]

    def test_failed_seed_isolated(self, tmp_path, monkeypatch):
        real = experiments.fit_estimator

        def flaky(kind, params, ds):
            if params["random_state"] == 1:
                raise RuntimeError("boom")
            return real(kind, params, ds)

        monkeypatch.setattr(experiments, "fit_estimator", flaky)
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, QUICK), "--output", str(out)]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        status = {e["seed"]: e for e in manifest["seeds"]}
        assert status[0]["status"] == "ok" and status[1]["status"] == "failed"
        assert "boom" in status[1]["error"]
        assert (out / "seed_0" / "report.json").is_file()

    def test_no_validation_rows(self, tmp_path):
        cfg = _with(dataset={**QUICK["dataset"], "validation_fraction": 0}, seeds=[0])
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, cfg), "--output", str(out)]) == 0
        assert (out / "seed_0" / "combination_head.json").is_file()

    @pytest.mark.parametrize("kind, params", [
        ("softmax_entropy", {"hidden": [8]}),
        ("mc_dropout", {"hidden": [8]}),
        ("ensemble_total", {"hidden": [8], "n_members": 2}),
        ("sngp", {"width": 8, "depth": 1, "n_features": 64}),
    ])
    def test_baselines(self, tmp_path, kind, params):
        cfg = _with(estimator={"kind": kind, "params": params}, seeds=[0])
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, cfg), "--output", str(out)]) == 0
        report = json.loads((out / "seed_0" / "report.json").read_text())
        assert 0 <= report["auroc"] <= 1


class TestSurface:
    def test_rows(self, tmp_path):
        out = tmp_path / "o"
        cfg = _with(estimator={"kind": "softmax_entropy", "params": {"hidden": [8]}})
        assert main(["surface", "--config", _write(tmp_path, cfg), "--output", str(out)]) == 0
        for seed in (0, 1):
            for name in ("constrained", "unconstrained"):
                with open(out / f"seed_{seed}" / f"surface_{name}.csv", newline="") as fh:
                    rows = list(csv.DictReader(fh))
                assert len(rows) == 2 * 4
            with open(out / f"seed_{seed}" / "severity_accuracy.csv", newline="") as fh:
                assert len(list(csv.DictReader(fh))) == 2 * 2
        with open(out / "severity_summary.csv", newline="") as fh:
            assert len(list(csv.DictReader(fh))) == 2


    def test_override_must_fit_estimator(self, tmp_path, capsys):
        cfg = _with(estimator={"kind": "ensemble_total", "params": {"hidden": [8]}})
        assert main(["surface", "--config", _write(tmp_path, cfg), "--output", str(tmp_path / "o")]) == 1
        assert "surface.constrained.spectral_norm" in capsys.readouterr().err


class TestDisagreementMap:
    def test_grid(self, tmp_path):
        out = tmp_path / "o"
        assert main(["disagreement-map", "--config", _write(tmp_path, QUICK), "--output", str(out),
                     "--seeds", "0"]) == 0
        for name in ("ensemble", "sdn"):
            with open(out / "seed_0" / f"disagreement_{name}.csv", newline="") as fh:
                rows = list(csv.DictReader(fh))
            assert len(rows) == 25
            assert {float(r["x0"]) for r in rows} == {-3.0, -1.5, 0.0, 1.5, 3.0}
            assert all(float(r["disagreement"]) >= 0 for r in rows)
        summary = json.loads((out / "seed_0" / "disagreement_summary.json").read_text())
        assert 0 <= summary["far_fraction_sdn"] <= 1

    def test_full_resolution_grid(self):
        from tulip.datasets import gen_ood_grid
        assert len(gen_ood_grid([(-3, 3), (-3, 3)], 101)) == 10201

    def test_non_2d_rejected(self, tmp_path, capsys):
        cfg = _with(dataset={"generator": "gaussian", "params": {"n_per_class": 10, "n_classes": 3, "d": 3}})
        assert main(["disagreement-map", "--config", _write(tmp_path, cfg), "--output", str(tmp_path / "o")]) == 1
        assert "2" in capsys.readouterr().err


def test_far_field_fraction():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
    scores = np.array([1.0, 0.0, 1.0, 1.0])
    # radius 1 times 1.5 leaves the last three points far; two of them score above half the maximum
    assert experiments.far_field_fraction(pts, scores, 1.0, 1.5) == pytest.approx(2 / 3)
