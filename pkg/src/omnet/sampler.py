"""Preprocessing, task-specific patch sampling and the data-transfer predicates."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import OMNetError

log = logging.getLogger(__name__)

MODALITIES = ("FLAIR", "T1", "T1c", "T2")
T1C = MODALITIES.index("T1c")

BACKGROUND, NORMAL, EDEMA, NCR_NET, ENHANCING = range(5)
COMPLETE_CLASSES = (EDEMA, NCR_NET, ENHANCING)
CORE_CLASSES = (NCR_NET, ENHANCING)

DEFAULT_PATCH = (32, 32, 16)
DILATION_RADIUS = 5
TRANSFER_THRESHOLDS = {2: Fraction(2, 5), 3: Fraction(1, 2)}


@dataclass
class Case:
    """A training/evaluation unit: normalised intensities, labels and brain mask."""

    intensities: np.ndarray
    labels: np.ndarray | None
    brain_mask: np.ndarray
    name: str = ""

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.brain_mask.shape


@dataclass(frozen=True)
class PatchSpec:
    corner: tuple[int, int, int]
    extents: tuple[int, int, int]
    task: int
    case: int = 0

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(c, c + e) for c, e in zip(self.corner, self.extents))


def brain_mask_from_intensities(intensities: np.ndarray) -> np.ndarray:
    return np.any(intensities != 0, axis=-1)


def normalize(intensities: np.ndarray, brain_mask: np.ndarray) -> np.ndarray:
    """Standardise each modality over brain voxels; non-brain voxels become 0."""
    out = np.zeros(intensities.shape, dtype=np.float32)
    if not brain_mask.any():
        raise OMNetError("empty brain mask")
    for m in range(intensities.shape[-1]):
        values = intensities[..., m][brain_mask].astype(np.float64)
        std = values.std()
        if std == 0:
            raise OMNetError(f"modality {m} has zero variance inside the brain")
        out[..., m][brain_mask] = ((values - values.mean()) / std).astype(np.float32)
    return out


def dilate_mask(mask: np.ndarray, radius: int = DILATION_RADIUS) -> np.ndarray:
    """Binary dilation with a (2r+1)^3 cube (Chebyshev ball)."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0 or not mask.any():
        return mask.copy()
    return ndimage.maximum_filter(mask, size=2 * radius + 1, mode="constant", cval=False)


def task_region(labels: np.ndarray, brain_mask: np.ndarray, task: int) -> np.ndarray:
    """Voxels eligible as patch centres for ``task``."""
    if task == 1:
        return brain_mask.astype(bool)
    if task == 2:
        return dilate_mask(np.isin(labels, COMPLETE_CLASSES), DILATION_RADIUS)
    if task == 3:
        return np.isin(labels, CORE_CLASSES)
    raise ValueError(f"task must be 1, 2 or 3, got {task}")


def clamp_corner(center: Sequence[int], extents: Sequence[int], shape: Sequence[int]) -> tuple[int, int, int]:
    if any(e > n for e, n in zip(extents, shape)):
        raise OMNetError(f"patch {tuple(extents)} larger than volume {tuple(shape)}")
    return tuple(int(min(max(c - e // 2, 0), n - e)) for c, e, n in zip(center, extents, shape))


def sample_patches(case: Case, task: int, count: int, rng: np.random.Generator,
                   extents: Sequence[int] = DEFAULT_PATCH, case_index: int = 0) -> list[PatchSpec]:
    """Draw ``count`` patch centres uniformly from the task's region.

    An empty region (e.g. no tumour core) yields an empty list and a warning.
    """
    region = task_region(case.labels, case.brain_mask, task)
    coords = np.argwhere(region)
    if len(coords) == 0:
        log.warning("case %r has an empty sampling region for task %d", case.name, task)
        return []
    picks = coords[rng.integers(0, len(coords), size=count)]
    extents = tuple(extents)
    return [PatchSpec(clamp_corner(c, extents, case.shape), extents, task, case_index) for c in picks]


def extract(array: np.ndarray, spec: PatchSpec) -> np.ndarray:
    return array[spec.slices()]


def transfer_predicate(labels_in_patch: np.ndarray, target_task: int) -> bool:
    """Whether a patch qualifies for transfer into ``target_task``'s loss.

    Task 2 needs at least 40% of all patch voxels in the complete tumour; task 3
    needs at least 50% in the tumour core. Compared in exact integer arithmetic.
    """
    classes = {2: COMPLETE_CLASSES, 3: CORE_CLASSES}.get(target_task)
    if classes is None:
        raise ValueError(f"transfer targets are tasks 2 and 3, got {target_task}")
    labels_in_patch = np.asarray(labels_in_patch)
    n = labels_in_patch.size
    if n == 0:
        return False
    hits = int(np.isin(labels_in_patch, classes).sum())
    thr = TRANSFER_THRESHOLDS[target_task]
    return hits * thr.denominator >= thr.numerator * n


def remap_labels(labels: np.ndarray, target_task: int) -> np.ndarray:
    """Task 1/2 train on the 5 classes; task 3 is enhancing (1) vs everything else (0)."""
    if target_task in (1, 2):
        return labels
    if target_task == 3:
        return (labels == ENHANCING).astype(labels.dtype)
    raise ValueError(f"task must be 1, 2 or 3, got {target_task}")


def prepare_case(intensities: np.ndarray, labels: np.ndarray | None, brain_mask: np.ndarray | None = None,
                 name: str = "") -> Case:
    """Normalise raw intensities into a :class:`Case`."""
    if brain_mask is None:
        brain_mask = brain_mask_from_intensities(intensities)
    if labels is not None:
        if labels.max(initial=0) > ENHANCING:
            raise OMNetError(f"labels must be in 0..4, found {labels.max()}")
        if np.any(np.isin(labels, COMPLETE_CLASSES) & ~brain_mask):
            raise OMNetError("tumour labels found outside the brain mask")
    return Case(normalize(intensities, brain_mask), labels, brain_mask.astype(bool), name)
