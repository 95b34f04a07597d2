"""DICE similarity and 95th-percentile Hausdorff distance on label masks.

Pixel spacing is 1. HD95 uses nearest-rank percentiles of the two directed
boundary-to-boundary distance lists and returns the larger one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

_CROSS = ndimage.generate_binary_structure(2, 1)


def _check_same(gt: np.ndarray, pred: np.ndarray) -> None:
    if np.shape(gt) != np.shape(pred):
        raise ValueError(f"mask dimensions differ: {np.shape(gt)} vs {np.shape(pred)}")


def dsc(gt: np.ndarray, pred: np.ndarray, class_id: int) -> float:
    """DICE similarity (%) of one class; 100 when the class is absent from both masks."""
    _check_same(gt, pred)
    y = np.asarray(gt) == class_id
    yh = np.asarray(pred) == class_id
    total = int(y.sum()) + int(yh.sum())
    if total == 0:
        return 100.0
    return 2.0 * int(np.logical_and(y, yh).sum()) / total * 100.0


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """(k, 2) row/col coordinates of foreground pixels with a 4-neighbour outside the foreground."""
    m = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(m, structure=_CROSS, border_value=0)
    return np.argwhere(m & ~inner)


def nearest_rank(values: np.ndarray, pct: int = 95) -> float:
    """The ceil(pct/100 * m)-th smallest value (1-based)."""
    m = len(values)
    k = max(1, (pct * m + 99) // 100)
    return float(np.partition(values, k - 1)[k - 1])


def _directed(src: np.ndarray, dst: np.ndarray) -> float:
    d, _ = cKDTree(dst).query(src, k=1)
    return nearest_rank(np.asarray(d, dtype=np.float64))


def hd95(gt: np.ndarray, pred: np.ndarray, class_id: int) -> float | None:
    """Symmetric 95th-percentile boundary distance in pixels.

    Returns 0.0 if both boundaries are empty and None if exactly one is.
    """
    _check_same(gt, pred)
    a = boundary_points(np.asarray(gt) == class_id)
    b = boundary_points(np.asarray(pred) == class_id)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return None
    return max(_directed(a, b), _directed(b, a))


@dataclass
class MetricsReport:
    per_class_dsc: list[float]
    per_class_hd95: list[float | None]
    mean_dsc: float
    mean_hd95: float | None
    classes: list[int] = field(default_factory=list)

    def rows(self):
        for c, d, h in zip(self.classes, self.per_class_dsc, self.per_class_hd95):
            yield c, d, h


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(classes: list[int], dsc_lists: list[list[float]], hd_lists: list[list[float | None]]) -> MetricsReport:
    per_dsc = [float(np.mean(v)) for v in dsc_lists]
    per_hd = [_mean_defined(v) for v in hd_lists]
    return MetricsReport(per_dsc, per_hd, float(np.mean(per_dsc)), _mean_defined(per_hd), list(classes))


def evaluate_case(gt: np.ndarray, pred: np.ndarray, num_classes: int) -> MetricsReport:
    """Per-class DSC and HD95 over foreground classes 1..C-1.

    A class absent from both masks scores DSC 100 and has no HD95 entry.
    """
    _check_same(gt, pred)
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    classes = list(range(1, num_classes))
    dscs, hds = [], []
    for c in classes:
        dscs.append(dsc(gt, pred, c))
        present = (gt == c).any() or (pred == c).any()
        hds.append(hd95(gt, pred, c) if present else None)
    return summarize(classes, [[d] for d in dscs], [[h] for h in hds])


def merge_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Mean over cases per class (undefined HD95 entries skipped), then over classes."""
    if not reports:
        raise ValueError("no reports to merge")
    classes = reports[0].classes
    dsc_lists = [[r.per_class_dsc[i] for r in reports] for i in range(len(classes))]
    hd_lists = [[r.per_class_hd95[i] for r in reports] for i in range(len(classes))]
    return summarize(classes, dsc_lists, hd_lists)
