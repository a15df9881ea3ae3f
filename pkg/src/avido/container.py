"""Binary containers for datasets and model checkpoints.

Both files share one layout so they can be parsed from any language:

    bytes 0..15   magic, ASCII padded with NUL to 16 bytes
    bytes 16..23  length N of the metadata block, little-endian uint64
    bytes 24..    N bytes of UTF-8 JSON metadata (canonical form: sorted
                  keys, no whitespace)
    then          row-major little-endian float64 arrays, in the order and
                  with the shapes declared by the metadata

Dataset arrays follow in the order branch_inputs, query_points, targets.
Checkpoint arrays follow in the order listed in metadata["arrays"].
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"AVIDONET1" + b"\0" * 7
CHECKPOINT_MAGIC = b"AVIDONETCKPT1" + b"\0" * 3


class ContainerError(ValueError):
    pass


def _encode_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write(path, magic: bytes, meta: dict, arrays: list[np.ndarray]) -> None:
    blob = _encode_meta(meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(path, magic: bytes) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[:16] != magic:
        raise ContainerError(f"{path}: bad magic, not a {magic.rstrip(b'0').decode(errors='replace')} file")
    n = int.from_bytes(data[16:24], "little")
    meta = json.loads(data[24:24 + n].decode("utf-8"))
    return meta, data[24 + n:]


def _take(buffer: bytes, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape)) if shape else 1
    nbytes = count * 8
    arr = np.frombuffer(buffer, dtype="<f8", count=count, offset=offset).reshape(shape)
    return arr.astype(np.float64), offset + nbytes


def write_dataset(path, meta: dict, branch_inputs, query_points, targets) -> None:
    branch_inputs = np.asarray(branch_inputs, dtype=np.float64)
    query_points = np.asarray(query_points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n1, m = branch_inputs.shape
    _, n2, d = query_points.shape
    meta = dict(meta)
    meta.update({"n1": n1, "m": m, "n2": n2, "d": d})
    _write(path, DATASET_MAGIC, meta, [branch_inputs, query_points, targets])


def read_dataset(path) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    meta, buf = _read(path, DATASET_MAGIC)
    n1, m, n2, d = meta["n1"], meta["m"], meta["n2"], meta["d"]
    offset = 0
    branch_inputs, offset = _take(buf, offset, (n1, m))
    query_points, offset = _take(buf, offset, (n1, n2, d))
    targets, offset = _take(buf, offset, (n1, n2))
    return meta, branch_inputs, query_points, targets


def write_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta)
    meta["arrays"] = [[name, list(arr.shape)] for name, arr in arrays.items()]
    _write(path, CHECKPOINT_MAGIC, meta, list(arrays.values()))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    meta, buf = _read(path, CHECKPOINT_MAGIC)
    arrays = {}
    offset = 0
    for name, shape in meta["arrays"]:
        arrays[name], offset = _take(buf, offset, tuple(shape))
    return meta, arrays
