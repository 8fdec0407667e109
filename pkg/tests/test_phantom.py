import numpy as np
import pytest

from omnet.phantom import DEFAULT_MEANS, Ellipsoid, PhantomSpec, generate, generate_dataset, random_spec


def test_same_seed_same_phantom():
    a = generate_dataset(2, seed=9)
    b = generate_dataset(2, seed=9)
    for (_, va, la, ba), (_, vb, lb, bb) in zip(a, b):
        np.testing.assert_array_equal(va, vb)
        np.testing.assert_array_equal(la, lb)
        np.testing.assert_array_equal(ba, bb)
    assert not np.array_equal(a[0][1], generate_dataset(1, seed=10)[0][1])


def test_zero_noise_gives_class_means():
    spec = PhantomSpec(noise_sigma=0.0)
    vol, labels, brain = generate(spec)
    means = np.asarray(DEFAULT_MEANS, np.float32)
    np.testing.assert_array_equal(vol[labels > 0], means[labels[labels > 0]])
    assert not vol[~brain].any()


def test_labels_nest_for_random_specs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        spec = random_spec(rng, shape=(32, 32, 16))
        spec.validate()
        shape = spec.shape
        brain, edema, core = spec.brain.mask(shape), spec.edema.mask(shape), spec.core.mask(shape)
        enh = spec.enhancing.mask(shape)
        assert np.all(brain[edema]) and np.all(edema[core]) and np.all(core[enh])


def test_class_histogram_covers_every_class():
    for _, _, labels, _ in generate_dataset(5, seed=3):
        counts = np.bincount(labels.ravel(), minlength=5)
        assert np.all(counts >= 50)


def test_noise_only_inside_brain():
    vol, labels, brain = generate(PhantomSpec(seed=4))
    assert not vol[~brain].any() and np.all(vol[brain] != 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(edema=Ellipsoid((5.0, 5.0, 5.0), (10.0, 3.0, 3.0))).validate()
    with pytest.raises(ValueError):
        PhantomSpec(noise_sigma=0.5, means=((0, 0, 0, 0), (1, 1, 1, 1), (1.2, 1, 1, 1), (3, 3, 3, 3),
                                            (5, 5, 5, 5))).validate()
    with pytest.raises(ValueError):
        PhantomSpec(means=((0, 0, 0),) * 5).validate()


def test_spec_round_trip_and_empty_enhancing():
    spec = random_spec(np.random.default_rng(1), enhancing=False)
    assert PhantomSpec.from_dict(spec.to_dict()) == spec
    _, labels, _ = generate(spec)
    assert not (labels == 4).any()
    cases = generate_dataset(10, seed=2, empty_enhancing_fraction=1.0)
    assert all(not (c[2] == 4).any() for c in cases)
