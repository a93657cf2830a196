"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  b"MNCP"
    version u32
    meta    u64 length + UTF-8 JSON (sorted keys)
    count   u32 number of tensors
    tensor  u16 name length + name, u8 ndim, u64 per-dim sizes,
            float64 little-endian payload
    trailer 4 bytes  b"MNCE"

Round-trips are bit-exact; loaders distinguish version mismatches,
truncation, and structural corruption.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_MAGIC = b"MNCP"
FORMAT_TRAILER = b"MNCE"
FORMAT_VERSION = 1
_MAX_NDIM = 8
_MAX_DIM = 1 << 40


class CheckpointError(Exception):
    """Base class for checkpoint I/O failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


@dataclass
class ModelCheckpoint:
    """Inference-ready snapshot of a learner.

    ``meta`` describes the structure (learner kind, concept index, window,
    per-network hidden sizes); ``tensors`` maps slash-separated names such
    as ``rec0/Wz`` or ``col2/w`` to write-locked float64 arrays.
    """

    kind: str
    meta: dict
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        locked = {}
        for name, arr in self.tensors.items():
            a = np.array(arr, dtype=float)
            a.setflags(write=False)
            locked[name] = a
        self.tensors = locked

    def group(self, prefix: str) -> dict:
        """Tensors under ``prefix/`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {name[cut:]: arr for name, arr in self.tensors.items()
                if name.startswith(prefix + "/")}


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(FORMAT_MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta = dict(ckpt.meta)
    meta["kind"] = ckpt.kind
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    names = sorted(ckpt.tensors)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(ckpt.tensors[name], dtype="<f8", order="C")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.tobytes())
    buf.write(FORMAT_TRAILER)
    Path(path).write_bytes(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(
            f"file ends while reading {what} ({len(data)} of {n} bytes)")
    return data


def load_checkpoint(path) -> ModelCheckpoint:
    with Path(path).open("rb") as fh:
        magic = _read_exact(fh, 4, "header")
        if magic != FORMAT_MAGIC:
            raise CheckpointFormatError(f"not a checkpoint file (header {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version}, this build reads {FORMAT_VERSION}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        if meta_len > (1 << 30):
            raise CheckpointFormatError(f"implausible metadata length {meta_len}")
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"corrupt metadata block: {exc}") from None
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"tensor {i} name length"))
            name = _read_exact(fh, name_len, f"tensor {i} name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"{name}: ndim"))
            if ndim > _MAX_NDIM:
                raise CheckpointFormatError(f"{name}: implausible ndim {ndim}")
            shape = []
            for d in range(ndim):
                (dim,) = struct.unpack("<Q", _read_exact(fh, 8, f"{name}: dim {d}"))
                if dim > _MAX_DIM:
                    raise CheckpointFormatError(f"{name}: implausible dimension {dim}")
                shape.append(dim)
            n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, 8 * n_items, f"{name}: payload")
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
        trailer = _read_exact(fh, 4, "trailer")
        if trailer != FORMAT_TRAILER:
            raise CheckpointFormatError(f"bad trailer {trailer!r}")
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after checkpoint trailer")
    kind = meta.pop("kind", None)
    if kind is None:
        raise CheckpointFormatError("metadata missing learner kind")
    return ModelCheckpoint(kind=kind, meta=meta, tensors=tensors)
