"""Binary checkpoint format.

Layout, all integers little-endian ``u32``, no padding::

    b"SGLA" | version | count | count x (name_len | utf-8 name | rank | extents... | float32 payload)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Mapping, Tuple

import numpy as np

from .errors import CheckpointError

MAGIC = b"SGLA"
VERSION = 1

_U32 = struct.Struct("<I")


def encode(tensors: Iterable[Tuple[str, np.ndarray]]) -> bytes:
    items = list(tensors)
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    pos = 0

    def take(size: int, what: str) -> bytes:
        nonlocal pos
        if pos + size > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {pos}")
        chunk = blob[pos:pos + size]
        pos += size
        return chunk

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    if take(4, "magic") != MAGIC:
        raise CheckpointError("not an SGLA checkpoint (bad magic)")
    version = u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = u32("parameter count")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        try:
            name = take(u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"invalid tensor name: {exc}") from None
        rank = u32(f"rank of {name}")
        shape = tuple(u32(f"extent of {name}") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(4 * size, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last tensor")
    return out


def save(path, tensors: Iterable[Tuple[str, np.ndarray]]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> "OrderedDict[str, np.ndarray]":
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(blob)


def assign(params, tensors: Mapping[str, np.ndarray]) -> None:
    """Copy ``tensors`` into ``params`` (a sequence of Parameters), strictly by name and shape."""
    for p in params:
        if p.name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {p.name}", tensor=p.name)
        arr = tensors[p.name]
        if arr.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {p.name}: checkpoint {arr.shape}, model {p.shape}",
                                  tensor=p.name)
    extra = [k for k in tensors if k not in {p.name for p in params}]
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensor {extra[0]}", tensor=extra[0])
    for p in params:
        p.data[...] = tensors[p.name]
