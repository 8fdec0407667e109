import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnet.backbone import NetworkConfig, build, build_cascade
from omnet.errors import OMNetError, ShapeError
from omnet.inference import TilePlan, coarse_mask, fuse_cascade, overlap_tile_predict, predict_volume, segment


def _position_predict(batch):
    """Encodes each voxel's in-patch position plus its intensity, so misplaced tiles show up."""
    n, w, h, l, _ = batch.shape
    grid = np.stack(np.meshgrid(np.arange(w), np.arange(h), np.arange(l), indexing="ij"), axis=-1)
    return np.concatenate([batch[..., :1], np.broadcast_to(grid, (n, w, h, l, 3)).astype(np.float32)], axis=-1)


@pytest.mark.parametrize("shape", [(64, 64, 32), (70, 45, 23), (32, 32, 16), (33, 40, 17)])
def test_coverage_is_exactly_one(shape):
    vol = np.random.default_rng(0).standard_normal(shape + (2,)).astype(np.float32)
    outs, cov = overlap_tile_predict(_position_predict, vol, TilePlan(), return_coverage=True)
    assert np.all(cov == 1)
    # identity channel survives stitching unchanged
    np.testing.assert_array_equal(outs[0][..., 0], vol[..., 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 80), st.integers(16, 40), st.integers(8, 30),
       st.sampled_from([(16, 16, 8), (32, 32, 16)]))
def test_axis_tiles_partition_every_extent(w, h, l, patch):
    plan = TilePlan.for_patch(patch)
    for axis, extent in enumerate((w, h, l)):
        if extent < plan.patch[axis]:
            with pytest.raises(ShapeError):
                plan.axis_tiles(axis, extent)
            continue
        tiles = plan.axis_tiles(axis, extent)
        assert tiles[0][1] == 0 and tiles[-1][2] == extent
        for (c, s, e), nxt in zip(tiles, tiles[1:] + [None]):
            assert c <= s < e <= c + plan.patch[axis] and 0 <= c <= extent - plan.patch[axis]
            if nxt is not None:
                assert nxt[1] == e


def test_interior_tiles_use_the_central_region():
    plan = TilePlan()
    assert plan.offset == (6, 6, 5)
    tiles = plan.axis_tiles(2, 32)
    interior = [t for t in tiles[1:-1] if t[1] - t[0] == plan.offset[2]]
    assert len(interior) == 3
    assert all(e - s == 5 for _, s, e in interior)
    assert tiles[-1] == (16, 30, 32)  # clamped to the volume edge


def test_stitched_values_equal_single_patch_recompute():
    model = build(NetworkConfig(patch=(16, 16, 8), base_channels=2, feature_channels=4, depth=2, attention="cga"))
    rng = np.random.default_rng(1)
    for p in model.parameters():
        p.data = (rng.standard_normal(p.shape) * 0.3).astype(np.float32)
    vol = rng.standard_normal((40, 36, 20, 4)).astype(np.float32)
    plan = TilePlan.for_patch(model.config.patch)
    stitched = overlap_tile_predict(model.predict_probs, vol, plan)
    tiles = list(plan.tiles(vol.shape[:3]))
    for _ in range(20):
        v = tuple(int(rng.integers(0, n)) for n in vol.shape[:3])
        corner, owned, local = next(t for t in tiles if all(s.start <= i < s.stop for s, i in zip(t[1], v)))
        patch = vol[tuple(slice(c, c + e) for c, e in zip(corner, plan.patch))][None]
        single = model.predict_probs(patch)
        rel = tuple(i - c for i, c in zip(v, corner))
        for task in range(3):
            assert np.array_equal(stitched[task][v], single[task][0][rel])


def test_tile_plan_validation():
    with pytest.raises(ValueError):
        TilePlan(patch=(8, 8, 4), central=(10, 10, 2))
    assert TilePlan.for_patch((16, 16, 8)).central == (10, 10, 2)
    assert TilePlan.for_patch((32, 32, 16)) == TilePlan()


def _onehot(labels, classes):
    return np.eye(classes, dtype=np.float32)[labels]


def test_fusion_rule():
    shape = (12, 12, 12)
    p1_labels = np.ones(shape, int)
    p1_labels[0, 0, 0] = 0
    p1_labels[5:7, 5:7, 5:7] = 2
    p2_labels = np.full(shape, 2)
    p2_labels[5, 5, 5] = 3
    p2_labels[6, 6, 6] = 4
    p2_labels[5, 6, 5] = 0
    p3_labels = np.zeros(shape, int)
    p3_labels[5, 5, 5] = 1  # task 2 says core, task 3 says enhancing
    p3_labels[0, 0, 0] = 1  # outside the region of interest: ignored
    fused = fuse_cascade(_onehot(p1_labels, 5), _onehot(p2_labels, 5), _onehot(p3_labels, 2), dilation_radius=2)
    assert fused[5, 5, 5] == 4
    assert fused[6, 6, 6] == 3  # task 3 overrides task 2's enhancing call
    assert fused[5, 6, 5] == 0
    assert fused[4, 4, 4] == 2  # inside the dilated mask, task 2 decides
    assert fused[0, 0, 0] == 0 and fused[11, 11, 11] == 1  # outside: task 1 over {0, 1}


def test_coarse_mask_sums_tumour_probabilities():
    p = np.zeros((1, 1, 3, 5), np.float32)
    p[0, 0, 0] = [0.4, 0.1, 0.2, 0.2, 0.1]  # 0.5: not above threshold
    p[0, 0, 1] = [0.3, 0.1, 0.2, 0.2, 0.2]
    p[0, 0, 2] = [0.0, 0.0, 1.0, 0.0, 0.0]
    np.testing.assert_array_equal(coarse_mask(p)[0, 0], [False, True, True])


def test_fusion_shape_checks():
    a = np.zeros((4, 4, 4, 5), np.float32)
    with pytest.raises(ShapeError):
        fuse_cascade(a, np.zeros((4, 4, 3, 5), np.float32), np.zeros((4, 4, 4, 2), np.float32))
    with pytest.raises(ShapeError):
        fuse_cascade(a, a, a)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fused_labels_respect_region_hierarchy(seed):
    rng = np.random.default_rng(seed)
    p1 = rng.dirichlet(np.ones(5), size=(8, 8, 8)).astype(np.float32)
    p2 = rng.dirichlet(np.ones(5), size=(8, 8, 8)).astype(np.float32)
    p3 = rng.dirichlet(np.ones(2), size=(8, 8, 8)).astype(np.float32)
    fused = fuse_cascade(p1, p2, p3, dilation_radius=1)
    enhancing, core, complete = fused == 4, np.isin(fused, (3, 4)), np.isin(fused, (2, 3, 4))
    assert np.all(core[enhancing]) and np.all(complete[core])
    assert set(np.unique(fused)) <= set(range(5))


def test_cascade_and_omnet_segment_shapes():
    cfg = NetworkConfig(patch=(16, 16, 8), base_channels=2, feature_channels=4, depth=2)
    vol = np.random.default_rng(2).standard_normal((20, 18, 9, 4)).astype(np.float32)
    for model in (build(cfg), build_cascade(cfg)):
        labels, probs = segment(model, vol)
        assert labels.shape == vol.shape[:3] and labels.dtype == np.uint8
        assert [p.shape[-1] for p in probs] == [5, 5, 2]
    with pytest.raises(OMNetError):
        predict_volume(build(cfg), vol, TilePlan())
