"""Streaming histogram metrics against the exact sort-based oracle."""

import numpy as np
import pytest

from rootnet import metrics as M


def random_scores(rng, n, sep=1.0):
    """Scores in [0,1] with positives shifted upward; returns (scores, labels)."""
    labels = rng.random(n) < 0.3
    scores = np.clip(rng.normal(0.4 + 0.2 * sep * labels, 0.15), 0.0, 1.0)
    return scores.astype(np.float32), labels


class TestHistogram:
    def test_accumulate_counts_by_bin(self):
        h = M.ScoreHistogram(bins=4)
        M.accumulate(h, np.array([0.0, 0.24, 0.25, 0.5, 0.99, 1.0], dtype=np.float32),
                     np.array([0, 0, 1, 1, 0, 1]))
        assert h.neg.tolist() == [2, 0, 0, 1]
        assert h.pos.tolist() == [0, 1, 1, 1]  # 1.0 lands in the closed last bin

    def test_out_of_range_rejected_and_state_unchanged(self):
        h = M.ScoreHistogram(bins=8)
        M.accumulate(h, np.array([0.5], dtype=np.float32), np.array([1]))
        before = (h.pos.copy(), h.neg.copy())
        with pytest.raises(M.MetricError):
            M.accumulate(h, np.array([0.5, 1.5], dtype=np.float32), np.array([1, 0]))
        with pytest.raises(M.MetricError):
            M.accumulate(h, np.array([np.nan], dtype=np.float32), np.array([0]))
        assert np.array_equal(h.pos, before[0]) and np.array_equal(h.neg, before[1])

    def test_merge_equals_single_pass(self):
        rng = np.random.default_rng(0)
        s, y = random_scores(rng, 10_000)
        whole = M.accumulate(M.ScoreHistogram(), s, y)
        parts = [M.accumulate(M.ScoreHistogram(), s[i::4], y[i::4]) for i in range(4)]
        merged = parts[0]
        for p in parts[1:]:
            merged = M.merge(merged, p)
        assert np.array_equal(whole.pos, merged.pos)
        assert np.array_equal(whole.neg, merged.neg)

    def test_merge_bin_mismatch(self):
        with pytest.raises(M.MetricError):
            M.merge(M.ScoreHistogram(bins=8), M.ScoreHistogram(bins=16))


class TestCurves:
    def test_roc_auc_close_to_exact(self):
        rng = np.random.default_rng(1)
        s, y = random_scores(rng, 200_000)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        roc = M.roc_curve(h)
        exact_roc, exact_pr = M.exact_auc(s, y)
        assert abs(roc.auc - exact_roc) < 2e-4
        pr = M.pr_curve(h)
        assert abs(pr.auc - exact_pr) < 2e-3

    def test_perfect_separation(self):
        s = np.array([0.1] * 50 + [0.9] * 50, dtype=np.float32)
        y = np.array([0] * 50 + [1] * 50)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        assert M.roc_curve(h).auc == pytest.approx(1.0)
        assert M.pr_curve(h).auc == pytest.approx(1.0)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(2)
        s = rng.random(100_000).astype(np.float32)
        y = rng.random(100_000) < 0.5
        h = M.accumulate(M.ScoreHistogram(), s, y)
        assert abs(M.roc_curve(h).auc - 0.5) < 0.01

    def test_roc_monotone_axes(self):
        rng = np.random.default_rng(3)
        s, y = random_scores(rng, 50_000)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        roc = M.roc_curve(h)
        assert np.all(np.diff(roc.xs) >= 0)
        assert np.all(np.diff(roc.ys) >= 0)

    def test_exact_auc_tie_handling(self):
        # all-equal scores: ROC-AUC must be exactly 0.5 (Mann-Whitney ties)
        s = np.full(100, 0.5)
        y = np.arange(100) < 30
        assert M.exact_auc(s, y)[0] == pytest.approx(0.5)

    def test_single_class_rejected(self):
        h = M.accumulate(M.ScoreHistogram(), np.array([0.5], dtype=np.float32), np.array([1]))
        with pytest.raises(M.MetricError):
            M.roc_curve(h)


class TestThresholdAtFpr:
    def test_loosest_threshold_and_recount(self):
        rng = np.random.default_rng(4)
        s, y = random_scores(rng, 300_000)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        thr, realized = M.threshold_at_fpr(h, 0.01)
        # direct recount on the raw scores
        neg = s[~y]
        fpr = (neg >= thr).mean()
        assert fpr <= 0.01 + 1e-12
        assert realized == pytest.approx(fpr, abs=1e-9)
        # loosest: one bin looser must overshoot
        looser = thr - 1.0 / h.bins
        assert (neg >= looser).mean() > 0.01

    def test_all_negatives_above_target(self):
        # negatives all score 1.0: only the empty prediction qualifies
        h = M.accumulate(M.ScoreHistogram(bins=16),
                         np.array([1.0, 0.2], dtype=np.float32), np.array([0, 1]))
        thr, realized = M.threshold_at_fpr(h, 0.01)
        assert thr > 1.0
        assert realized == 0.0

    def test_invalid_target(self):
        h = M.ScoreHistogram()
        with pytest.raises(M.MetricError):
            M.threshold_at_fpr(h, 0.0)


class TestConfusion:
    def test_counts_match_direct(self):
        rng = np.random.default_rng(5)
        s, y = random_scores(rng, 10_000)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        # use a bin-edge threshold so binning is exact
        thr = 4096 / h.bins
        c = M.confusion_at(h, thr)
        pred = s >= thr
        assert c.tp == int((pred & y).sum())
        assert c.fp == int((pred & ~y).sum())
        assert c.fn == int((~pred & y).sum())
        assert c.tn == int((~pred & ~y).sum())


class TestReporting:
    def test_summary_row_format(self):
        row = M.summary_csv_row("Depth 6", [0.99, 0.9908], [0.8, 0.82])
        assert row["model"] == "Depth 6"
        assert row["mean_roc_auc"] == pytest.approx(0.9904)
        assert row["std_roc_auc"] == pytest.approx(np.std([0.99, 0.9908], ddof=1))

    def test_summary_std_conventions(self):
        one = M.summary_csv_row("m", [0.9], [0.8])
        assert one["std_roc_auc"] == 0.0  # single trial: std 0 by convention
        same = M.summary_csv_row("m", [0.9] * 5, [0.8] * 5)
        assert same["std_roc_auc"] == 0.0  # identical trials: exactly 0

    def test_write_csv_and_svg(self, tmp_path):
        rng = np.random.default_rng(6)
        s, y = random_scores(rng, 5_000)
        h = M.accumulate(M.ScoreHistogram(), s, y)
        roc = M.roc_curve(h)
        csv_path = tmp_path / "roc.csv"
        roc.write_csv(csv_path, "fpr", "tpr")
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert len(lines) > 2
        svg_path = tmp_path / "roc.svg"
        M.curve_svg(roc, svg_path, "fpr", "tpr")
        svg = svg_path.read_text()
        assert svg.lstrip().startswith("<svg") and "polyline" in svg
        # determinism: same input, identical bytes
        svg_path2 = tmp_path / "roc2.svg"
        M.curve_svg(roc, svg_path2, "fpr", "tpr")
        assert svg == svg_path2.read_text()
