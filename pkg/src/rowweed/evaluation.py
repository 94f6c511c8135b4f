"""Scoring against ground truth: ROC/AUC for patch scores, one-to-one
matching of detected and true crop lines, and per-pixel class metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingleClass
from .raster import axis_distance_deg

# --- ROC ------------------------------------------------------------------


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; the first is +inf (nothing predicted positive)
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_auc(scores, labels) -> RocCurve:
    """ROC over every distinct score (positive = label 1 = weed).

    A sample is predicted positive at threshold ``t`` when its score is
    ``>= t``; tied scores move together, so the trapezoid area equals the
    tie-corrected Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise DimensionMismatch("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]  # end of each tie block
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


# --- line matching --------------------------------------------------------------


def _as_pair(line) -> tuple[float, float]:
    if hasattr(line, "theta_deg"):
        return float(line.theta_deg), float(line.rho_px)
    t, r = line
    return float(t), float(r)


def line_errors(a, b) -> tuple[float, float]:
    """Undirected angle difference and rho difference of two normal-form
    lines; ``(theta, rho)`` and ``(theta + 180, -rho)`` are the same line."""
    ta, ra = _as_pair(a)
    tb, rb = _as_pair(b)
    da = float(axis_distance_deg(ta, tb))
    d = (ta - tb) % 360.0
    flipped = 90.0 < d < 270.0
    dr = abs(ra + rb) if flipped else abs(ra - rb)
    return da, dr


@dataclass
class LinePair:
    detected: int
    truth: int
    angle_error_deg: float
    rho_error_px: float


@dataclass
class LineMatchReport:
    pairs: list[LinePair]
    n_detected: int
    n_truth: int

    @property
    def false_positives(self) -> int:
        return self.n_detected - len(self.pairs)

    @property
    def misses(self) -> int:
        return self.n_truth - len(self.pairs)

    @property
    def precision(self) -> float:
        return len(self.pairs) / self.n_detected if self.n_detected else 1.0

    @property
    def recall(self) -> float:
        return len(self.pairs) / self.n_truth if self.n_truth else 1.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "false_positives": self.false_positives,
            "misses": self.misses,
            "max_angle_error_deg": max((p.angle_error_deg for p in self.pairs), default=0.0),
            "max_rho_error_px": max((p.rho_error_px for p in self.pairs), default=0.0),
            "pairs": [asdict(p) for p in self.pairs],
        }


def match_lines(detected, truth, angle_gate: float = 2.0, rho_gate: float = 10.0) -> LineMatchReport:
    """Greedy one-to-one matching, cheapest pair first, on the cost
    ``angle/angle_gate + rho/rho_gate`` among pairs inside both gates."""
    det = [_as_pair(d) for d in detected]
    tru = [_as_pair(t) for t in truth]
    cand = []
    for i, d in enumerate(det):
        for j, t in enumerate(tru):
            da, dr = line_errors(d, t)
            if da <= angle_gate and dr <= rho_gate:
                cand.append((da / angle_gate + dr / rho_gate, i, j, da, dr))
    cand.sort()
    used_d, used_t, pairs = set(), set(), []
    for _, i, j, da, dr in cand:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        pairs.append(LinePair(i, j, da, dr))
    return LineMatchReport(pairs, len(det), len(tru))


# --- pixel metrics -----------------------------------------------------------------

PIXEL_CLASSES = ("crop", "weed")


@dataclass
class PixelMetrics:
    # rows: truth crop, truth weed; columns: predicted background, crop, weed
    confusion: np.ndarray
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    f1: dict = field(default_factory=dict)

    @property
    def evaluated(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "confusion": {"rows": ["truth_crop", "truth_weed"],
                          "cols": ["pred_background", "pred_crop", "pred_weed"],
                          "values": self.confusion.tolist()},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _safe(num, den) -> float:
    return float(num / den) if den else 0.0


def pixel_metrics(predicted: np.ndarray, truth: np.ndarray) -> PixelMetrics:
    """Counts over pixels that are vegetation in truth (class 1 or 2).

    Predicting background on such a pixel is a miss for its true class.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DimensionMismatch(f"prediction {predicted.shape} vs truth {truth.shape}")
    conf = np.zeros((2, 3), dtype=np.int64)
    for ti in (1, 2):
        m = truth == ti
        conf[ti - 1] = np.bincount(predicted[m].astype(np.int64), minlength=3)[:3]
    return metrics_from_confusion(conf)


def metrics_from_confusion(conf: np.ndarray) -> PixelMetrics:
    """Precision/recall/F1 from a (truth crop/weed) x (pred bg/crop/weed)
    count matrix; confusions can be summed over images first."""
    conf = np.asarray(conf, dtype=np.int64)
    out = PixelMetrics(conf)
    for ci, name in enumerate(PIXEL_CLASSES):
        tp = conf[ci, ci + 1]
        p = _safe(tp, conf[:, ci + 1].sum())
        r = _safe(tp, conf[ci].sum())
        out.precision[name] = p
        out.recall[name] = r
        out.f1[name] = _safe(2 * p * r, p + r)
    return out
