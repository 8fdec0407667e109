"""Overlap-tile prediction and cascade fusion of the three task outputs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import OMNetError, ShapeError
from .sampler import COMPLETE_CLASSES, CORE_CLASSES, DILATION_RADIUS, ENHANCING, NCR_NET, dilate_mask


@dataclass(frozen=True)
class TilePlan:
    """Patch extents and the central region each patch contributes.

    The stride equals the central extents. Along each axis the central region
    starts at ``(patch - central) // 2``; the odd voxel goes to the far side.
    """

    patch: tuple[int, int, int] = (32, 32, 16)
    central: tuple[int, int, int] = (20, 20, 5)

    def __post_init__(self):
        if any(c < 1 or c > p for c, p in zip(self.central, self.patch)):
            raise ValueError(f"central region {self.central} must fit inside patch {self.patch}")

    @classmethod
    def for_patch(cls, patch) -> "TilePlan":
        """Default plan for ``patch``: the 32x32x16 / 20x20x5 proportions, rounded down."""
        patch = tuple(int(p) for p in patch)
        ref_patch, ref_central = cls.patch, cls.central
        if patch == ref_patch:
            return cls()
        central = tuple(max(1, p * c // r) for p, c, r in zip(patch, ref_central, ref_patch))
        return cls(patch, central)

    @property
    def stride(self) -> tuple[int, int, int]:
        return self.central

    @property
    def offset(self) -> tuple[int, int, int]:
        return tuple((p - c) // 2 for p, c in zip(self.patch, self.central))

    def axis_tiles(self, axis: int, extent: int) -> list[tuple[int, int, int]]:
        """``(patch corner, own_start, own_stop)`` per tile along one axis.

        Ownership intervals partition ``[0, extent)``: the first tile also owns
        the leading border, the last tile the trailing remainder, and corners
        are clamped so every owned voxel lies inside its tile.
        """
        p, c, o = self.patch[axis], self.central[axis], self.offset[axis]
        if extent < p:
            raise ShapeError(f"volume extent {extent} smaller than patch {p} on axis {axis}")
        bounds = [0]
        b = o + c
        while b < extent:
            bounds.append(b)
            b += c
        bounds.append(extent)
        tiles = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            corner = min(max(start - o, 0), extent - p)
            tiles.append((corner, start, stop))
        return tiles

    def tiles(self, shape: Sequence[int]):
        """All 3D tiles as ``(corner, owned_slices, local_slices)``."""
        per_axis = [self.axis_tiles(a, int(shape[a])) for a in range(3)]
        for combo in itertools.product(*per_axis):
            corner = tuple(t[0] for t in combo)
            owned = tuple(slice(t[1], t[2]) for t in combo)
            local = tuple(slice(t[1] - t[0], t[2] - t[0]) for t in combo)
            yield corner, owned, local


def overlap_tile_predict(predict: Callable[[np.ndarray], Sequence[np.ndarray] | np.ndarray],
                         volume: np.ndarray, plan: TilePlan = TilePlan(), batch_size: int = 1,
                         return_coverage: bool = False):
    """Stitch per-voxel outputs from the central regions of overlapping patches.

    ``predict`` maps a batch ``[n, *patch, C_in]`` to one array or a sequence
    of arrays ``[n, *patch, C_k]``. Returns a list of stitched volumes (one
    per output), plus the coverage count map when requested. The default of
    one patch per call keeps results independent of batch composition, since
    batched BLAS kernels may sum in a different order.
    """
    shape = volume.shape[:3]
    tiles = list(plan.tiles(shape))
    outputs: list[np.ndarray] | None = None
    coverage = np.zeros(shape, dtype=np.int32)
    for start in range(0, len(tiles), batch_size):
        chunk = tiles[start:start + batch_size]
        batch = np.stack([volume[tuple(slice(c, c + e) for c, e in zip(corner, plan.patch))]
                          for corner, _, _ in chunk])
        preds = predict(batch)
        if isinstance(preds, np.ndarray):
            preds = [preds]
        if outputs is None:
            outputs = [np.zeros(shape + (p.shape[-1],), dtype=np.float32) for p in preds]
        for i, (_, owned, local) in enumerate(chunk):
            for out, pred in zip(outputs, preds):
                out[owned] = pred[i][local]
            coverage[owned] += 1
    if return_coverage:
        return outputs, coverage
    return outputs


def coarse_mask(task1_probs: np.ndarray) -> np.ndarray:
    """Complete-tumour mask: summed tumour-class probability above 0.5."""
    return task1_probs[..., list(COMPLETE_CLASSES)].sum(axis=-1) > 0.5


def fuse_cascade(task1_probs: np.ndarray, task2_probs: np.ndarray, task3_probs: np.ndarray,
                 dilation_radius: int = DILATION_RADIUS) -> np.ndarray:
    """Combine the three task outputs into a 5-class label volume.

    Outside the dilated coarse mask, task 1 decides background vs normal. Inside,
    task 2 labels all five classes, and wherever task 2 says core, task 3 decides
    enhancing vs NCR/NET.
    """
    shape = task1_probs.shape[:3]
    if task2_probs.shape[:3] != shape or task3_probs.shape[:3] != shape:
        raise ShapeError(f"misaligned probability volumes: {task1_probs.shape}, {task2_probs.shape}, "
                         f"{task3_probs.shape}")
    if task3_probs.shape[-1] != 2:
        raise ShapeError(f"task-3 output must have 2 classes, got {task3_probs.shape[-1]}")
    roi = dilate_mask(coarse_mask(task1_probs), dilation_radius)
    labels = np.argmax(task1_probs[..., :2], axis=-1).astype(np.uint8)
    refined = np.argmax(task2_probs, axis=-1).astype(np.uint8)
    core = np.isin(refined, CORE_CLASSES)
    enhancing = np.argmax(task3_probs, axis=-1) == 1
    refined[core] = np.where(enhancing[core], ENHANCING, NCR_NET)
    labels[roi] = refined[roi]
    return labels


def predict_volume(model, intensities: np.ndarray, plan: TilePlan | None = None, batch_size: int = 1):
    """Three stitched probability volumes for a normalised volume.

    Works for OM-Net (one pass yields all three) and the model cascade.
    """
    plan = plan or TilePlan.for_patch(model.config.patch)
    if tuple(plan.patch) != tuple(model.config.patch):
        raise OMNetError(f"tile patch {plan.patch} differs from network patch {model.config.patch}")
    return overlap_tile_predict(model.predict_probs, intensities, plan, batch_size)


def segment(model, intensities: np.ndarray, plan: TilePlan | None = None, batch_size: int = 1):
    """Label volume plus the three probability volumes."""
    probs = predict_volume(model, intensities, plan, batch_size)
    return fuse_cascade(*probs), probs
