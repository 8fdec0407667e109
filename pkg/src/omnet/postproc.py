"""Two-step refinement of predicted label volumes.

Step 1 drops tumour components smaller than ``min(2000, 0.1 * V_max)``.
Step 2 splits the edema of components with little predicted enhancing tumour
into two intensity clusters and relabels the darker (T1c) cluster as NCR/NET.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .sampler import COMPLETE_CLASSES, EDEMA, ENHANCING, NCR_NET, NORMAL, T1C

log = logging.getLogger(__name__)

MAX_TAU = 2000
TAU_FRACTION = 0.1
GLOBAL_ENHANCING_RATIO = 0.1
COMPONENT_ENHANCING_RATIO = 0.05
COMPONENT_ENHANCING_MAX = 1000


@dataclass
class ConnectedComponent:
    id: int
    voxels: np.ndarray  # [n, 3] coordinates
    vol_t: int
    vol_e: int = 0


def _structure(connectivity: int) -> np.ndarray:
    rank = {6: 1, 18: 2, 26: 3}.get(connectivity)
    if rank is None:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, rank)


def label_components(mask: np.ndarray, connectivity: int = 26) -> tuple[np.ndarray, int]:
    return ndimage.label(np.asarray(mask, dtype=bool), structure=_structure(connectivity))


def connected_components_3d(mask: np.ndarray, labels: np.ndarray | None = None,
                            connectivity: int = 26) -> list[ConnectedComponent]:
    """Connected regions of ``mask``; ``vol_e`` is filled when ``labels`` is given."""
    comp, n = label_components(mask, connectivity)
    out = []
    for i, sl in enumerate(ndimage.find_objects(comp), start=1):
        if sl is None:
            continue
        local = np.argwhere(comp[sl] == i) + np.array([s.start for s in sl])
        vol_e = int((labels[tuple(local.T)] == ENHANCING).sum()) if labels is not None else 0
        out.append(ConnectedComponent(i, local, len(local), vol_e))
    return out


def tau_vol(v_max: int) -> float:
    return min(MAX_TAU, TAU_FRACTION * v_max)


def remove_small_clusters(labels: np.ndarray, brain_mask: np.ndarray | None = None,
                          report: dict | None = None) -> np.ndarray:
    """Relabel tumour components with volume ``< tau_vol`` as normal tissue.

    Removed voxels become normal tissue inside the brain (background outside).
    """
    out = labels.copy()
    comps = connected_components_3d(np.isin(labels, COMPLETE_CLASSES))
    if report is not None:
        report.update(components=len(comps), removed=[], tau_vol=None, v_max=0)
    if not comps:
        return out
    v_max = max(c.vol_t for c in comps)
    tau = tau_vol(v_max)
    for c in comps:
        if c.vol_t < tau:
            idx = tuple(c.voxels.T)
            fill = NORMAL if brain_mask is None else np.where(brain_mask[idx], NORMAL, 0)
            out[idx] = fill
            if report is not None:
                report["removed"].append(c.vol_t)
    if report is not None:
        report.update(tau_vol=tau, v_max=v_max)
    return out


def within_cluster_ss(points: np.ndarray, assign: np.ndarray) -> float:
    total = 0.0
    for k in np.unique(assign):
        group = points[assign == k]
        total += float(((group - group.mean(axis=0)) ** 2).sum())
    return total


def initial_assignment(points: np.ndarray, key_channel: int = T1C) -> np.ndarray:
    """Nearest-seed assignment from the min/max ``key_channel`` points."""
    points = np.asarray(points, dtype=np.float64)
    col = points[:, key_channel] if points.shape[1] > key_channel else points[:, 0]
    seeds = points[[int(np.argmin(col)), int(np.argmax(col))]]
    d = ((points[:, None, :] - seeds[None]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)


def kmeans2(points, key_channel: int = T1C, max_iter: int = 100):
    """Two-cluster Lloyd iteration, seeded with the min/max ``key_channel`` points.

    Returns ``(assignments, degenerate)``; ``degenerate`` is True when all
    points coincide and everything lands in a single cluster.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) < 2:
        raise ValueError("kmeans2 needs at least two points")
    if np.all(points == points[0]):
        return np.zeros(len(points), dtype=np.int64), True
    assign = initial_assignment(points, key_channel)
    for _ in range(max_iter):
        centers = np.stack([points[assign == k].mean(axis=0) if np.any(assign == k) else points[0]
                            for k in (0, 1)])
        d = ((points[:, None, :] - centers[None]) ** 2).sum(axis=-1)
        new = np.argmin(d, axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
    return assign, False


def relabel_edema(labels: np.ndarray, intensities: np.ndarray, report: dict | None = None) -> np.ndarray:
    """K-means edema split for components with little predicted enhancing tumour.

    A component is processed when the global enhancing/complete ratio is
    below 0.1, its own ratio is below 0.05 and it has fewer than 1000
    enhancing voxels. Only edema voxels can change (to NCR/NET).
    """
    out = labels.copy()
    complete = np.isin(labels, COMPLETE_CLASSES)
    vol_t = int(complete.sum())
    vol_e = int((labels == ENHANCING).sum())
    processed = []
    if report is not None:
        report.update(vol_t=vol_t, vol_e=vol_e, processed=processed)
    if vol_t == 0 or vol_e / vol_t >= GLOBAL_ENHANCING_RATIO:
        return out
    for comp in connected_components_3d(complete, labels):
        if not (comp.vol_e / comp.vol_t < COMPONENT_ENHANCING_RATIO and comp.vol_e < COMPONENT_ENHANCING_MAX):
            continue
        coords = comp.voxels[labels[tuple(comp.voxels.T)] == EDEMA]
        if len(coords) < 2:
            continue
        idx = tuple(coords.T)
        assign, degenerate = kmeans2(intensities[idx])
        if degenerate:
            continue
        t1c = intensities[idx][:, T1C]
        dark = int(np.argmin([t1c[assign == k].mean() for k in (0, 1)]))
        chosen = coords[assign == dark]
        out[tuple(chosen.T)] = NCR_NET
        processed.append({"component": comp.id, "vol_t": comp.vol_t, "vol_e": comp.vol_e,
                          "edema": len(coords), "relabelled": len(chosen)})
    return out


def postprocess(labels: np.ndarray, intensities: np.ndarray | None = None, brain_mask: np.ndarray | None = None,
                step1: bool = True, step2: bool = True) -> tuple[np.ndarray, dict]:
    report: dict = {}
    out = labels
    if step1:
        report["step1"] = {}
        out = remove_small_clusters(out, brain_mask, report["step1"])
    if step2:
        if intensities is None:
            raise ValueError("step 2 needs the intensity volume")
        report["step2"] = {}
        out = relabel_edema(out, intensities, report["step2"])
    return out, report
