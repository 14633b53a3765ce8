"""Binary checkpoint files and newline-delimited training logs.

Checkpoint layout (all integers little-endian)::

    b"KPNC"                     magic, 4 bytes
    u32 version                 currently 1
    u32 metadata length         followed by that many bytes of UTF-8 JSON
    tensor table, repeated until end of file:
        u32 name length, name (UTF-8)
        u8  dtype tag           0 = float32, 1 = float64, 2 = int64
        u32 rank, rank × u32 extents
        raw little-endian values, C order

The metadata carries ``tensor_count`` so truncated files are detected.
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"KPNC"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    meta = dict(metadata, tensor_count=len(tensors))
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        try:
            tag = _CODES[arr.dtype]
        except KeyError:
            raise DataError(f"tensor {name!r}: unsupported dtype {arr.dtype}") from None
        encoded = name.encode()
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BI", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())
    _atomic_write(Path(path), buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a KPNC checkpoint")
    try:
        version, meta_len = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        meta = json.loads(raw[pos : pos + meta_len].decode())
        pos += meta_len
        tensors = {}
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode()
            pos += n
            tag, rank = struct.unpack_from("<BI", raw, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            dtype = _TAGS[tag]
            count = int(np.prod(shape)) if rank else 1
            if pos + count * dtype.itemsize > len(raw):
                raise DataError(f"{path}: tensor {name!r} is truncated")
            tensors[name] = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
            pos += count * dtype.itemsize
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc
    if len(tensors) != meta.get("tensor_count", len(tensors)):
        raise DataError(f"{path}: expected {meta['tensor_count']} tensors, found {len(tensors)}")
    return meta, tensors


class TrainLog:
    """Collects per-iteration records; optionally mirrors them to an NDJSON file."""

    FIELDS = ("iter", "stage", "lambda", "kp_loss", "task_loss", "val_acc")

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("")

    def write(self, **record) -> None:
        rec = {k: record.get(k) for k in self.FIELDS}
        rec.update({k: v for k, v in record.items() if k not in rec})
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")

    def curve(self, key: str, **match) -> list:
        return [r[key] for r in self.records if all(r.get(k) == v for k, v in match.items())]


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
