import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_ece, pairwise_auroc
from tulip.exceptions import InvalidArgumentError
from tulip.metrics import EvalReport, accuracy, auroc, ece, surface_bins


class TestAuroc:
    def test_separated(self):
        assert auroc([0.1, 0.2], [0.5, 0.9]) == 1.0

    def test_all_ties(self):
        assert auroc([0.3] * 4, [0.3] * 5) == 0.5

    def test_hand_example(self):
        assert auroc([0.1, 0.4], [0.3, 0.9]) == 0.75

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            auroc([], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.lists(st.integers(0, 5), min_size=1, max_size=40))
    def test_pairwise_oracle_with_ties(self, a, b):
        assert abs(auroc(a, b) - pairwise_auroc(a, b)) < 1e-12
        assert abs(auroc(b, a) - (1 - auroc(a, b))) < 1e-12

    def test_monotone_transform(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=30), rng.normal(size=40) + 0.5
        assert auroc(a, b) == auroc(np.exp(a), np.exp(b))


class TestEce:
    def test_overconfident(self):
        assert ece(np.ones(10), np.arange(10) % 2) == pytest.approx(0.5)

    def test_calibrated(self):
        conf = np.array([0.25] * 4 + [0.75] * 4)
        correct = np.array([1, 0, 0, 0, 1, 1, 1, 0])
        assert ece(conf, correct, n_bins=2) == pytest.approx(0.0, abs=1e-15)

    def test_six_points(self):
        conf = np.array([0.1, 0.3, 0.5, 0.6, 0.9, 1.0])
        correct = np.array([0, 1, 1, 0, 1, 1])
        assert ece(conf, correct, 3) == pytest.approx(direct_ece(conf, correct, 3), abs=1e-15)

    def test_edges(self):
        # right-closed: 1/3 lands in the first of three bins, 0 in the first
        conf = np.array([0.0, 1 / 3, 1.0])
        correct = np.array([1, 1, 0])
        assert ece(conf, correct, 3) == pytest.approx(direct_ece(conf, correct, 3), abs=1e-15)

    @pytest.mark.parametrize("n_bins", [6, 7, 9, 10, 15])
    def test_every_edge(self, n_bins):
        # each value b/n sits exactly on an edge and belongs to bin b-1
        conf = np.arange(n_bins + 1) / n_bins
        correct = np.arange(n_bins + 1) % 2
        assert ece(conf, correct, n_bins) == pytest.approx(direct_ece(conf, correct, n_bins), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ece([0.5], [1, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60), st.integers(1, 20))
    def test_oracle_and_bound(self, pts, n_bins):
        conf = np.array([p[0] for p in pts])
        corr = np.array([p[1] for p in pts], dtype=float)
        e = ece(conf, corr, n_bins)
        assert abs(e - direct_ece(conf, corr, n_bins)) < 1e-12
        assert 0 <= e <= 1


class TestAccuracy:
    def test_cases(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
        assert accuracy([0, 0], [1, 1]) == 0.0
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            accuracy([], [])


class TestSurface:
    def test_single_bin(self):
        g = surface_bins(np.zeros(5), np.full(5, 0.4), np.ones(5), n_bins=10)
        assert g.count_cells.shape == (1, 10)
        assert np.count_nonzero(g.count_cells) == 1

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        sev = rng.choice([0.0, 1.0], size=300)
        unc = rng.uniform(size=300)
        corr = rng.integers(0, 2, 300)
        g = surface_bins(sev, unc, corr, n_bins=10)
        for i, s in enumerate([0.0, 1.0]):
            m = sev == s
            lo, hi = unc[m].min(), unc[m].max()
            w = (hi - lo) / 10
            for b in range(10):
                a, z = lo + b * w, lo + (b + 1) * w
                sel = [j for j in np.flatnonzero(m) if (a < unc[j] <= z) or (b == 0 and unc[j] == lo)]
                # floating edges: allow membership differences only at exact boundaries
                assert abs(g.count_cells[i, b] - len(sel)) <= 1
            assert g.count_cells[i].sum() == m.sum()

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            surface_bins([], [], [])

    def test_csv(self, tmp_path):
        g = surface_bins([0, 0, 1], [0.1, 0.2, 0.3], [1, 0, 1], n_bins=2)
        g.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "severity,bin,bin_lo,bin_hi,accuracy,count"
        assert len(lines) == 1 + 2 * 2


def test_report_roundtrip(tmp_path):
    rep = EvalReport("tulip", 0.9, 0.8, 0.05, 10, 20, {"annulus": 0.8})
    j, c = rep.write(tmp_path / "r")
    assert EvalReport.read_json(j) == rep
    assert "auroc[annulus]" in open(c).read()
