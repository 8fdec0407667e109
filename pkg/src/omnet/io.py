"""Binary volume, label and checkpoint formats plus JSON sidecars.

All integers are little-endian u32 and all floats little-endian f32.

* Volume ``OMV1``: magic, W, H, L, C, then data with x varying fastest and the
  channel slowest (Fortran order of a ``[W, H, L, C]`` array).
* Labels ``OML1``: magic, W, H, L, then u8 codes, x fastest.
* Checkpoint ``OMW1``: magic, config JSON (length + bytes), parameter count,
  then per parameter: name length, name, rank, dims, f32 data (row-major).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .sampler import MODALITIES

VOLUME_MAGIC = b"OMV1"
LABEL_MAGIC = b"OML1"
CHECKPOINT_MAGIC = b"OMW1"

_U32 = struct.Struct("<I")


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of file (wanted {n} bytes, got {len(buf)})")
    return buf


def _u32(fh) -> int:
    return _U32.unpack(_read_exact(fh, 4))[0]


def _magic(fh, expected: bytes, path) -> None:
    got = fh.read(4)
    if got != expected:
        raise FormatError(f"{path}: bad magic {got!r}, expected {expected!r}")


def write_volume(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 3:
        data = data[..., None]
    if data.ndim != 4:
        raise FormatError(f"volume must be [W,H,L,C], got shape {data.shape}")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        for n in data.shape:
            fh.write(_U32.pack(n))
        fh.write(data.tobytes(order="F"))


def read_volume(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _magic(fh, VOLUME_MAGIC, path)
        shape = tuple(_u32(fh) for _ in range(4))
        raw = _read_exact(fh, 4 * int(np.prod(shape)))
    return np.frombuffer(raw, dtype="<f4").reshape(shape, order="F").astype(np.float32)


def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise FormatError(f"labels must be [W,H,L], got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise FormatError("label codes must fit in u8")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        for n in labels.shape:
            fh.write(_U32.pack(n))
        fh.write(labels.astype(np.uint8).tobytes(order="F"))


def read_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _magic(fh, LABEL_MAGIC, path)
        shape = tuple(_u32(fh) for _ in range(3))
        raw = _read_exact(fh, int(np.prod(shape)))
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape, order="F").copy()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_sidecar(path, modalities=MODALITIES, spacing=(1.0, 1.0, 1.0), provenance: dict | None = None) -> None:
    meta = {"modalities": list(modalities), "spacing": [float(s) for s in spacing],
            "provenance": provenance or {}}
    sidecar_path(path).write_text(json.dumps(meta, indent=2))


def read_sidecar(path) -> dict:
    p = sidecar_path(path)
    if not p.exists():
        return {"modalities": list(MODALITIES), "spacing": [1.0, 1.0, 1.0], "provenance": {}}
    return json.loads(p.read_text())


def save_checkpoint(path, config: dict, state: dict[str, np.ndarray]) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_U32.pack(len(blob)))
        fh.write(blob)
        fh.write(_U32.pack(len(state)))
        for name, arr in state.items():
            enc = name.encode()
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(_U32.pack(len(enc)))
            fh.write(enc)
            fh.write(_U32.pack(arr.ndim))
            for n in arr.shape:
                fh.write(_U32.pack(n))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        _magic(fh, CHECKPOINT_MAGIC, path)
        config = json.loads(_read_exact(fh, _u32(fh)))
        state = {}
        for _ in range(_u32(fh)):
            name = _read_exact(fh, _u32(fh)).decode()
            shape = tuple(_u32(fh) for _ in range(_u32(fh)))
            raw = _read_exact(fh, 4 * int(np.prod(shape, dtype=np.int64)))
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return config, state
