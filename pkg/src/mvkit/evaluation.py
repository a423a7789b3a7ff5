"""Frame-wise optimal detection matching and MODA/MODP aggregation.

Matching is a minimum-total-distance bipartite assignment in continuous
ground meters; pairs farther apart than the threshold are inadmissible.
Metrics over a set of frames:

    MODA      = 1 - (sum FN + sum FP) / sum GT
    precision = TP / (TP + FP)
    recall    = TP / (TP + FN)
    MODP      = mean over matches of (1 - d / threshold)

Empty-denominator conventions: precision = 1 when no detections,
recall = 1 and MODA = 1 when there is no ground truth (and no false
positives), MODP = 0 without matches.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class FrameMatch:
    """Matching result for one frame: (det idx, gt idx, distance m) pairs."""

    pairs: tuple[tuple[int, int, float], ...]
    false_positives: int
    false_negatives: int

    @property
    def true_positives(self) -> int:
        return len(self.pairs)

    @property
    def ground_truth(self) -> int:
        return len(self.pairs) + self.false_negatives


@dataclass(frozen=True)
class MetricsReport:
    moda: float
    modp: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    gt: int

    def to_dict(self) -> dict:
        return {
            "moda": self.moda,
            "modp": self.modp,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "gt": self.gt,
        }

    def to_text(self) -> str:
        lines = [
            f"moda {self.moda:.6f}",
            f"modp {self.modp:.6f}",
            f"precision {self.precision:.6f}",
            f"recall {self.recall:.6f}",
            f"tp {self.tp}",
            f"fp {self.fp}",
            f"fn {self.fn}",
            f"gt {self.gt}",
        ]
        return "\n".join(lines)


def match_detections(dets, gts, threshold_m: float = 0.5) -> FrameMatch:
    """Optimally match detections to ground truth within ``threshold_m``.

    Uses a Hungarian assignment with inadmissible pairs priced out, which
    maximizes the number of within-threshold matches and, among those,
    minimizes the total matched distance.
    """
    if threshold_m <= 0:
        raise ValueError("threshold must be positive")
    dets = np.asarray(dets, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    nd, ng = len(dets), len(gts)
    if nd == 0 or ng == 0:
        return FrameMatch(pairs=(), false_positives=nd, false_negatives=ng)
    dist = np.linalg.norm(dets[:, None, :] - gts[None, :, :], axis=2)
    # one inadmissible assignment must cost more than every admissible
    # matching combined, so match count is maximized first
    big = threshold_m * (min(nd, ng) + 1.0) * 1000.0
    cost = np.where(dist <= threshold_m, dist, big)
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(
        (int(i), int(j), float(dist[i, j]))
        for i, j in zip(rows, cols)
        if dist[i, j] <= threshold_m
    )
    return FrameMatch(
        pairs=pairs,
        false_positives=nd - len(pairs),
        false_negatives=ng - len(pairs),
    )


def compute_metrics(frames: list[FrameMatch], threshold_m: float = 0.5) -> MetricsReport:
    """Aggregate matches over frames into a MODA/MODP report."""
    if not frames:
        raise ValueError("need at least one frame")
    tp = sum(f.true_positives for f in frames)
    fp = sum(f.false_positives for f in frames)
    fn = sum(f.false_negatives for f in frames)
    gt = tp + fn
    if gt == 0:
        # no ground truth anywhere: perfect iff nothing was hallucinated;
        # with false positives, count each against a unit denominator so
        # the report stays finite
        moda = 1.0 if fp == 0 else 1.0 - float(fp)
    else:
        moda = 1.0 - (fn + fp) / gt
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if gt == 0 else tp / (tp + fn)
    if tp == 0:
        modp = 0.0
    else:
        quality = sum(1.0 - d / threshold_m for f in frames for (_, _, d) in f.pairs)
        modp = quality / tp
    return MetricsReport(
        moda=moda, modp=modp, precision=precision, recall=recall, tp=tp, fp=fp, fn=fn, gt=gt
    )
