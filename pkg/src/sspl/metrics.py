"""Localization scoring: cIoU per sample, success ratios over a threshold grid, AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))


def binarize_map(m):
    return np.asarray(m) >= 0.5


def per_sample_ciou(mask, gt_mask):
    """|mask & gt| / (|gt| + |mask & ~gt|), i.e. IoU for a single binary annotator."""
    mask = np.asarray(mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    if mask.shape != gt.shape:
        raise UsageError(f"mask shape {mask.shape} differs from ground truth {gt.shape}")
    n_gt = int(gt.sum())
    if n_gt == 0:
        raise UsageError("ground-truth mask is empty")
    inter = int((mask & gt).sum())
    return inter / (n_gt + int((mask & ~gt).sum()))


def success_ratio(cious, tau):
    cious = np.asarray(cious, dtype=np.float64)
    if cious.size == 0:
        raise UsageError("no samples to score")
    return float((cious >= tau).mean())


def success_curve(cious, thresholds=THRESHOLDS):
    return [success_ratio(cious, t) for t in thresholds]


def auc(curve, thresholds=THRESHOLDS):
    """Trapezoidal area under a success curve sampled on ``thresholds``."""
    if len(curve) == 0:
        raise UsageError("empty success curve")
    y = np.asarray(curve, dtype=np.float64)
    x = np.asarray(thresholds, dtype=np.float64)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


@dataclass
class EvalReport:
    per_sample_ciou: list
    thresholds: tuple
    success_curve: list
    ciou_at_half: float
    auc: float

    @classmethod
    def from_cious(cls, cious):
        curve = success_curve(cious)
        return cls(list(map(float, cious)), THRESHOLDS, curve, curve[THRESHOLDS.index(0.5)], auc(curve))

    def to_csv(self):
        lines = ["tau,success"]
        lines += [f"{t:.2f},{s:.6f}" for t, s in zip(self.thresholds, self.success_curve)]
        lines.append(f"ciou_at_half,{self.ciou_at_half:.6f}")
        lines.append(f"auc,{self.auc:.6f}")
        return "\n".join(lines) + "\n"


def score_maps(maps, gt_masks):
    """EvalReport for paired image-scale maps in [0, 1] and ground-truth masks."""
    return EvalReport.from_cious([per_sample_ciou(binarize_map(m), g) for m, g in zip(maps, gt_masks)])
