"""Region extraction, overlap metrics and surface distances."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import UndefinedMetricError
from .sampler import COMPLETE_CLASSES, CORE_CLASSES, ENHANCING

REGIONS = ("complete", "core", "enhancing")


@dataclass
class RegionMasks:
    complete: np.ndarray
    core: np.ndarray
    enhancing: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)


def region_masks(labels: np.ndarray) -> RegionMasks:
    return RegionMasks(np.isin(labels, COMPLETE_CLASSES), np.isin(labels, CORE_CLASSES), labels == ENHANCING)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int, both_empty: bool) -> float:
    # 0/0: 1 when prediction and truth are both empty, else 0
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, c.fp + 2 * c.tp + c.fn, c.tp + c.fp + c.fn == 0)


def ppv(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.fp + c.tp, c.tp + c.fp + c.fn == 0)


def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, c.tp + c.fp + c.fn == 0)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Coordinates of mask voxels with at least one 6-neighbour outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1),
                                      border_value=0)
    return np.argwhere(mask & ~interior)


def surface_distances(mask_a: np.ndarray, mask_b: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)):
    """Directed nearest-surface distances ``(a -> b, b -> a)`` in physical units."""
    if not np.any(mask_a) or not np.any(mask_b):
        raise UndefinedMetricError("surface distance undefined for an empty mask")
    scale = np.asarray(spacing, dtype=np.float64)
    sa = surface_voxels(mask_a) * scale
    sb = surface_voxels(mask_b) * scale
    d_ab = cKDTree(sb).query(sa)[0]
    d_ba = cKDTree(sa).query(sb)[0]
    return d_ab, d_ba


def _nearest_rank(values: np.ndarray, q: float) -> float:
    ordered = np.sort(values)
    rank = max(1, int(np.ceil(q / 100.0 * len(ordered))))
    return float(ordered[rank - 1])


def hausdorff(mask_a, mask_b, spacing=(1.0, 1.0, 1.0)) -> float:
    d_ab, d_ba = surface_distances(mask_a, mask_b, spacing)
    return float(max(d_ab.max(), d_ba.max()))


def hausdorff95(mask_a, mask_b, spacing=(1.0, 1.0, 1.0)) -> float:
    d_ab, d_ba = surface_distances(mask_a, mask_b, spacing)
    return max(_nearest_rank(d_ab, 95), _nearest_rank(d_ba, 95))


def evaluate(pred: np.ndarray, gt: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> list[dict]:
    """One row per region: counts, Dice, PPV, Sensitivity, Hausdorff, Hausdorff95.

    Distances are ``nan`` (with ``distance_defined`` False) when either mask is empty.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    pr, gr = region_masks(pred), region_masks(gt)
    rows = []
    for name in REGIONS:
        c = confusion(pr[name], gr[name])
        row = {"region": name, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
               "dice": dice(c), "ppv": ppv(c), "sensitivity": sensitivity(c),
               "empty_convention": c.tp + c.fp + c.fn == 0 or c.tp + c.fp == 0 or c.tp + c.fn == 0}
        try:
            d_ab, d_ba = surface_distances(pr[name], gr[name], spacing)
            row["hausdorff"] = float(max(d_ab.max(), d_ba.max()))
            row["hausdorff95"] = max(_nearest_rank(d_ab, 95), _nearest_rank(d_ba, 95))
            row["distance_defined"] = True
        except UndefinedMetricError:
            row["hausdorff"] = row["hausdorff95"] = float("nan")
            row["distance_defined"] = False
        rows.append(row)
    return rows


OVERLAP_COLUMNS = ("dice", "ppv", "sensitivity")
DISTANCE_COLUMNS = ("dice", "hausdorff95")


def write_metrics_csv(results: dict[str, list[dict]], path, layout: str = "overlap") -> None:
    """Wide table, one line per case: ``<metric>_<region>`` columns.

    ``layout`` picks Dice/PPV/Sensitivity (``overlap``) or Dice/Hausdorff95
    (``distance``), mirroring the two leaderboard table styles.
    """
    metrics = {"overlap": OVERLAP_COLUMNS, "distance": DISTANCE_COLUMNS}[layout]
    header = ["case"] + [f"{m}_{r}" for m in metrics for r in REGIONS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for case, rows in results.items():
            by_region = {r["region"]: r for r in rows}
            line = [case]
            for m in metrics:
                for r in REGIONS:
                    v = by_region[r][m]
                    line.append("NA" if isinstance(v, float) and np.isnan(v) else f"{v:.6f}")
            w.writerow(line)
