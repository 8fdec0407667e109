import numpy as np
import pytest

from omnet.errors import FormatError
from omnet.io import (
    load_checkpoint,
    read_labels,
    read_sidecar,
    read_volume,
    save_checkpoint,
    write_labels,
    write_sidecar,
    write_volume,
)


def test_volume_round_trip_and_layout(tmp_path):
    vol = np.random.default_rng(0).standard_normal((5, 4, 3, 2)).astype(np.float32)
    path = tmp_path / "v.omv"
    write_volume(path, vol)
    np.testing.assert_array_equal(read_volume(path), vol)
    raw = path.read_bytes()
    assert raw[:4] == b"OMV1" and len(raw) == 4 + 16 + vol.size * 4
    # x varies fastest: the second stored value is voxel (1, 0, 0) of channel 0
    assert np.frombuffer(raw[20:28], "<f4")[1] == vol[1, 0, 0, 0]


def test_label_round_trip(tmp_path):
    labels = np.random.default_rng(1).integers(0, 5, (6, 5, 4)).astype(np.uint8)
    path = tmp_path / "l.oml"
    write_labels(path, labels)
    np.testing.assert_array_equal(read_labels(path), labels)


def test_checkpoint_round_trip(tmp_path):
    state = {"a.weight": np.arange(24, dtype=np.float32).reshape(2, 3, 4), "a.bias": np.ones(3, np.float32)}
    path = tmp_path / "m.omw"
    save_checkpoint(path, {"network": {"seed": 1}}, state)
    config, loaded = load_checkpoint(path)
    assert config == {"network": {"seed": 1}}
    assert list(loaded) == list(state)
    for k in state:
        np.testing.assert_array_equal(loaded[k], state[k])


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.omv"
    path.write_bytes(b"XXXX" + b"\0" * 16)
    with pytest.raises(FormatError):
        read_volume(path)
    good = tmp_path / "v.omv"
    write_volume(good, np.zeros((2, 2, 2, 1), np.float32))
    good.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(FormatError):
        read_volume(good)
    with pytest.raises(FormatError):
        read_labels(good)


def test_sidecar_defaults(tmp_path):
    path = tmp_path / "v.omv"
    assert read_sidecar(path)["spacing"] == [1.0, 1.0, 1.0]
    write_sidecar(path, spacing=(1.0, 1.0, 2.0), provenance={"seed": 3})
    meta = read_sidecar(path)
    assert meta["spacing"] == [1.0, 1.0, 2.0] and meta["provenance"] == {"seed": 3}
