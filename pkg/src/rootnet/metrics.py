"""Streaming pixel-level ROC / PR evaluation.

Scores are binned into a fixed-resolution histogram per class; curves and
AUCs come from suffix sums over the bins, so evaluating billions of pixels
costs one pass and a constant 1 MiB of counters. Histograms merge exactly
(integer counts), enabling sharded evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

_trapz = getattr(np, "trapezoid", None) or np.trapz

DEFAULT_BINS = 65536


class MetricError(ValueError):
    """Degenerate or invalid metric input."""


@dataclass
class ScoreHistogram:
    """Per-class counts of scores; bin b covers [b/B, (b+1)/B), last bin
    closed at 1.0."""

    bins: int = DEFAULT_BINS
    pos: np.ndarray = field(default=None)
    neg: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.pos is None:
            self.pos = np.zeros(self.bins, dtype=np.int64)
        if self.neg is None:
            self.neg = np.zeros(self.bins, dtype=np.int64)

    @property
    def total_pos(self) -> int:
        return int(self.pos.sum())

    @property
    def total_neg(self) -> int:
        return int(self.neg.sum())


try:  # fused bin-and-count loop; the throughput target needs it
    from numba import njit

    @njit
    def _accumulate_kernel(s, y, pos, neg, bf, bmax):  # pragma: no cover
        for i in range(s.size):
            v = np.float64(s[i])
            if not (v >= 0.0 and v <= 1.0):  # also catches NaN
                return i
            k = int(v * bf)
            if k > bmax:
                k = bmax
            if y[i]:
                pos[k] += 1
            else:
                neg[k] += 1
        return -1

except ImportError:  # pragma: no cover
    _accumulate_kernel = None


def accumulate(hist: ScoreHistogram, scores: np.ndarray, labels: np.ndarray) -> ScoreHistogram:
    """Add a raster of scores/labels to the histogram (single pass)."""
    s = np.ascontiguousarray(scores).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    b = hist.bins
    y8 = np.ascontiguousarray(y != 0, dtype=np.uint8)
    if _accumulate_kernel is not None:
        pos = np.zeros(b, dtype=np.int64)
        neg = np.zeros(b, dtype=np.int64)
        bad = _accumulate_kernel(s, y8, pos, neg, np.float64(b), b - 1)
        if bad >= 0:  # histogram untouched on validation failure
            raise MetricError(f"scores must lie in [0,1], got {float(s[bad])} at flat index {bad}")
        hist.pos += pos
        hist.neg += neg
        return hist
    lo, hi = float(s.min(initial=0.0)), float(s.max(initial=0.0))
    if not (lo >= 0.0 and hi <= 1.0):  # also catches NaN
        raise MetricError(f"scores must lie in [0,1], got range [{lo}, {hi}]")
    idx = (s.astype(np.float64) * b).astype(np.int64)
    np.minimum(idx, b - 1, out=idx)  # score exactly 1.0 -> last bin
    combined = np.bincount(idx + b * y8.astype(np.int64), minlength=2 * b)
    hist.neg += combined[:b]
    hist.pos += combined[b:]
    return hist


def merge(a: ScoreHistogram, b: ScoreHistogram) -> ScoreHistogram:
    if a.bins != b.bins:
        raise MetricError(f"bin count mismatch: {a.bins} vs {b.bins}")
    return ScoreHistogram(a.bins, a.pos + b.pos, a.neg + b.neg)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / max(self.tp + self.fn, 1)

    @property
    def fpr(self) -> float:
        return self.fp / max(self.fp + self.tn, 1)

    @property
    def precision(self) -> float:
        return self.tp / max(self.tp + self.fp, 1)

    recall = tpr


@dataclass
class CurveSummary:
    """Ordered curve points plus trapezoid-rule AUC.

    ROC points are (fpr, tpr); PR points are (recall, precision). A
    threshold of bins/B + one step marks the empty-prediction end."""

    thresholds: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    auc: float

    def write_csv(self, path, x_name: str, y_name: str):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", x_name, y_name])
            for t, x, y in zip(self.thresholds, self.xs, self.ys):
                w.writerow([f"{t:.9g}", f"{x:.9g}", f"{y:.9g}"])


def _suffix_counts(hist: ScoreHistogram):
    """TP and FP counts for thresholds at every bin edge k/B, k = B..0.

    Entry i corresponds to predicting positive when score >= (B-i)/B
    (bin-granular: the edge catches its whole bin)."""
    tp = np.concatenate([[0], np.cumsum(hist.pos[::-1])])
    fp = np.concatenate([[0], np.cumsum(hist.neg[::-1])])
    return tp, fp


def roc_curve(hist: ScoreHistogram) -> CurveSummary:
    p, n = hist.total_pos, hist.total_neg
    if p == 0:
        raise MetricError("ROC undefined: no positive pixels accumulated")
    if n == 0:
        raise MetricError("ROC undefined: no negative pixels accumulated")
    tp, fp = _suffix_counts(hist)
    tpr = tp / p
    fpr = fp / n
    auc = float(_trapz(tpr, fpr))
    b = hist.bins
    thresholds = (b - np.arange(b + 1)) / b
    return CurveSummary(thresholds, fpr, tpr, auc)


def pr_curve(hist: ScoreHistogram) -> CurveSummary:
    """Precision-recall curve anchored at recall 0.

    The anchor carries the first non-empty bin's precision (no optimistic
    precision-1 extrapolation); its threshold sits one bin step above 1 to
    mark the empty-prediction end. AUC is the trapezoid integral over
    [0, 1] in recall."""
    p = hist.total_pos
    if p == 0:
        raise MetricError("PR undefined: no positive pixels accumulated")
    tp, fp = _suffix_counts(hist)
    pred = tp + fp
    keep = pred > 0  # drop empty-prediction prefix entries
    tp, fp = tp[keep], fp[keep]
    b = hist.bins
    thresholds = ((b - np.arange(b + 1)) / b)[keep]
    recall = tp / p
    precision = tp / (tp + fp)
    thresholds = np.concatenate([[1.0 + 1.0 / b], thresholds])
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    auc = float(_trapz(precision, recall))
    return CurveSummary(thresholds, recall, precision, auc)


def threshold_at_fpr(hist: ScoreHistogram, target: float = 0.01) -> tuple[float, float]:
    """Loosest bin-edge threshold whose realized FPR is <= target.

    Returns (threshold, realized_fpr). If even the top bin alone exceeds
    the target, returns a threshold just above 1.0 with realized FPR 0."""
    n = hist.total_neg
    if n == 0:
        raise MetricError("threshold_at_fpr undefined: no negative pixels")
    b = hist.bins
    tp, fp = _suffix_counts(hist)
    fpr = fp / n  # entry i -> threshold (b-i)/b, nondecreasing in i
    ok = np.nonzero(fpr <= target)[0]
    i = ok[-1]  # largest i -> smallest qualifying threshold
    if i == 0:  # even the top bin alone exceeds the target
        return 1.0 + 1.0 / b, 0.0
    return (b - i) / b, float(fpr[i])


def confusion_at(hist: ScoreHistogram, threshold: float) -> ConfusionCounts:
    """Confusion counts predicting positive where score >= threshold,
    snapped down to the containing bin edge."""
    b = hist.bins
    k = min(int(np.floor(threshold * b)), b)  # snap down to edge k/b
    if threshold > 1.0:
        k = b
    tp = int(hist.pos[k:].sum())
    fp = int(hist.neg[k:].sum())
    return ConfusionCounts(tp=tp, fp=fp, tn=hist.total_neg - fp, fn=hist.total_pos - tp)


def exact_auc(scores, labels) -> tuple[float, float]:
    """Sort-based exact ROC-AUC (midpoint tie handling, i.e. Mann-Whitney U)
    and PR-AUC under the same endpoint convention as pr_curve.

    In-memory testing oracle; independent of the histogram path."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1) != 0
    p = int(y.sum())
    n = s.size - p
    if p == 0 or n == 0:
        raise MetricError(f"exact_auc undefined: {'positive' if p == 0 else 'negative'} class empty")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    sorted_y = y[order]
    # midpoint ranks for ties
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = ranks[sorted_y].sum()
    roc = (rank_sum - p * (p + 1) / 2.0) / (p * n)
    # PR: sweep distinct scores descending, trapezoid from first point
    desc_s = sorted_s[::-1]
    desc_y = sorted_y[::-1]
    tp_cum = np.cumsum(desc_y)
    boundaries = np.nonzero(np.diff(desc_s))[0]  # last index of each tie group
    idx = np.concatenate([boundaries, [s.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    pred = idx + 1.0
    recall = np.concatenate([[0.0], tp / p])
    precision = tp / pred
    precision = np.concatenate([[precision[0]], precision])
    pr = float(_trapz(precision, recall))
    return float(roc), pr


def summary_csv_row(model: str, roc_aucs, pr_aucs) -> dict:
    """Aggregate per-trial AUCs into the summary table layout."""
    roc_aucs = np.asarray(roc_aucs, dtype=np.float64)
    pr_aucs = np.asarray(pr_aucs, dtype=np.float64)
    std = lambda a: float(a.std(ddof=1)) if a.size > 1 else 0.0
    return {
        "model": model,
        "mean_roc_auc": float(roc_aucs.mean()),
        "std_roc_auc": std(roc_aucs),
        "mean_pr_auc": float(pr_aucs.mean()),
        "std_pr_auc": std(pr_aucs),
    }


def write_summary_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as f:
        fields = ["model", "mean_roc_auc", "std_roc_auc", "mean_pr_auc", "std_pr_auc"]
        w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items() if k in fields})


def curve_svg(summary: CurveSummary, path, x_label: str, y_label: str, size: int = 480):
    """Minimal deterministic SVG line plot of a curve."""
    pad = 40
    span = size - 2 * pad
    xs = np.asarray(summary.xs, dtype=np.float64)
    ys = np.asarray(summary.ys, dtype=np.float64)
    # thin dense curves so the file stays small
    if xs.size > 2048:
        step = xs.size // 2048 + 1
        keep = np.unique(np.concatenate([np.arange(0, xs.size, step), [xs.size - 1]]))
        xs, ys = xs[keep], ys[keep]
    pts = " ".join(f"{pad + x * span:.2f},{size - pad - y * span:.2f}" for x, y in zip(xs, ys))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">'
        f'<rect width="{size}" height="{size}" fill="white"/>'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>'
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>'
        f'<text x="{size // 2}" y="{size - 8}" text-anchor="middle" font-size="13">{x_label}</text>'
        f'<text x="12" y="{size // 2}" font-size="13" transform="rotate(-90 12 {size // 2})" '
        f'text-anchor="middle">{y_label}</text>'
        f'<text x="{size // 2}" y="{pad - 10}" text-anchor="middle" font-size="13">'
        f"AUC = {summary.auc:.4f}</text></svg>"
    )
    with open(path, "w") as f:
        f.write(svg)
