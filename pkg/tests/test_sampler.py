from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnet.errors import OMNetError
from omnet.phantom import generate_dataset
from omnet.sampler import (
    COMPLETE_CLASSES,
    CORE_CLASSES,
    TRANSFER_THRESHOLDS,
    clamp_corner,
    dilate_mask,
    normalize,
    prepare_case,
    remap_labels,
    sample_patches,
    task_region,
    transfer_predicate,
)

from oracles import count_fraction


def _oracle_transfer(labels, task):
    classes = COMPLETE_CLASSES if task == 2 else CORE_CLASSES
    hits, total = count_fraction(labels, classes)
    threshold = {2: Fraction(2, 5), 3: Fraction(1, 2)}[task]
    return Fraction(hits, total) >= threshold


def test_transfer_matches_counting_oracle_on_random_patches():
    rng = np.random.default_rng(0)
    for i in range(1000):
        shape = (4, 5, 3) if i % 2 else (2, 5, 2)
        weights = rng.dirichlet(np.ones(5))
        labels = rng.choice(5, size=shape, p=weights)
        for task in (2, 3):
            assert transfer_predicate(labels, task) == _oracle_transfer(labels, task)


@pytest.mark.parametrize("task,hits,total,expected", [
    (2, 2, 5, True), (2, 40, 100, True), (2, 39, 100, False), (2, 41, 100, True),
    (3, 1, 2, True), (3, 50, 100, True), (3, 49, 100, False),
    (2, 6553, 16384, False), (2, 6554, 16384, True), (3, 8192, 16384, True), (3, 8191, 16384, False),
])
def test_transfer_thresholds_boundaries(task, hits, total, expected):
    labels = np.ones(total, dtype=np.uint8)
    labels[:hits] = 4 if task == 3 else 2
    assert transfer_predicate(labels, task) is expected


def test_transfer_thresholds_are_exact_fractions():
    assert TRANSFER_THRESHOLDS == {2: Fraction(2, 5), 3: Fraction(1, 2)}
    with pytest.raises(ValueError):
        transfer_predicate(np.zeros(4), 1)


def test_transfer_counts_over_all_voxels_including_background():
    labels = np.array([0, 0, 0, 2, 2])  # 40% complete when background counts
    assert transfer_predicate(labels, 2)
    assert not transfer_predicate(np.array([0, 1, 1, 3, 2]), 3)


def test_remap_labels():
    labels = np.array([0, 1, 2, 3, 4])
    np.testing.assert_array_equal(remap_labels(labels, 1), labels)
    np.testing.assert_array_equal(remap_labels(labels, 3), [0, 0, 0, 0, 1])


def test_dilation_matches_chebyshev_distance():
    mask = np.zeros((11, 11, 11), bool)
    mask[5, 5, 5] = True
    mask[0, 10, 3] = True
    grown = dilate_mask(mask, 2)
    pts = np.argwhere(mask)
    grid = np.indices(mask.shape).reshape(3, -1).T
    cheb = np.abs(grid[:, None, :] - pts[None]).max(axis=-1).min(axis=1).reshape(mask.shape)
    np.testing.assert_array_equal(grown, cheb <= 2)


def test_task_regions_nest_and_follow_labels():
    _, vol, labels, brain = generate_dataset(1, seed=3)[0]
    r1, r2, r3 = (task_region(labels, brain, t) for t in (1, 2, 3))
    np.testing.assert_array_equal(r1, brain)
    assert np.all(r2[np.isin(labels, COMPLETE_CLASSES)])
    np.testing.assert_array_equal(r3, np.isin(labels, CORE_CLASSES))


def test_sampled_centres_lie_in_region_and_patches_in_bounds():
    _, vol, labels, brain = generate_dataset(1, seed=4)[0]
    case = prepare_case(vol, labels, brain)
    rng = np.random.default_rng(0)
    for task in (1, 2, 3):
        specs = sample_patches(case, task, 50, rng, (16, 16, 8))
        assert len(specs) == 50
        for s in specs:
            assert all(0 <= c and c + e <= n for c, e, n in zip(s.corner, s.extents, case.shape))
        if task == 3:
            # a core-centred patch always contains core voxels
            assert all(np.isin(labels[s.slices()], CORE_CLASSES).any() for s in specs)


def test_empty_region_yields_no_patches(caplog):
    _, vol, labels, brain = generate_dataset(1, seed=5)[0]
    labels = np.where(labels >= 2, 1, labels).astype(np.uint8)
    case = prepare_case(vol, labels, brain, name="healthy")
    assert sample_patches(case, 3, 5, np.random.default_rng(0), (16, 16, 8)) == []
    assert "healthy" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(0, 63), st.integers(0, 63), st.integers(0, 31)))
def test_clamp_corner_keeps_patch_inside(center):
    corner = clamp_corner(center, (32, 32, 16), (64, 64, 32))
    assert all(0 <= c <= n - e for c, e, n in zip(corner, (32, 32, 16), (64, 64, 32)))


def test_clamp_corner_rejects_oversized_patch():
    with pytest.raises(OMNetError):
        clamp_corner((0, 0, 0), (32, 32, 16), (20, 64, 32))


def test_normalize_standardises_brain_only():
    _, vol, labels, brain = generate_dataset(1, seed=6)[0]
    out = normalize(vol, brain)
    assert not out[~brain].any()
    np.testing.assert_allclose(out[brain].mean(axis=0), 0, atol=1e-4)
    np.testing.assert_allclose(out[brain].std(axis=0), 1, atol=1e-4)
    flat = vol.copy()
    flat[..., 1][brain] = 3.0
    with pytest.raises(OMNetError):
        normalize(flat, brain)


def test_prepare_case_rejects_tumour_outside_brain():
    _, vol, labels, brain = generate_dataset(1, seed=7)[0]
    bad = labels.copy()
    bad[0, 0, 0] = 2
    with pytest.raises(OMNetError):
        prepare_case(vol, bad, brain)
