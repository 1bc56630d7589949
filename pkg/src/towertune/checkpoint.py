"""Bit-exact parameter serialization.

Layout: 5-byte magic, u64 entry count, manifest entries (length-prefixed
UTF-8 name, u64 rank, u64 dims, u64 frozen flag, u64 absolute byte offset),
then raw little-endian float64 payloads in manifest order.  Everything an
entry needs to be read independently lives in the manifest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .params import ParamStore

MAGIC = b"CSKT1"
_U64 = struct.Struct("<Q")


@dataclass
class CheckpointEntry:
    name: str
    shape: tuple
    frozen: bool
    array: np.ndarray


def _entry_bytes(name: bytes, ndim: int) -> int:
    # name length + name + rank + dims + frozen + offset
    return 8 + len(name) + 8 + 8 * ndim + 8 + 8


def save(store: ParamStore, path) -> None:
    entries = list(store.items())
    names = [name.encode("utf-8") for name, _, _ in entries]
    header_size = len(MAGIC) + 8 + sum(
        _entry_bytes(nb, entries[i][1].data.ndim) for i, nb in enumerate(names))

    blob = bytearray()
    blob += MAGIC
    blob += _U64.pack(len(entries))
    offset = header_size
    payloads = []
    for nb, (name, tensor, frozen) in zip(names, entries):
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        blob += _U64.pack(len(nb))
        blob += nb
        blob += _U64.pack(data.ndim)
        for dim in data.shape:
            blob += _U64.pack(dim)
        blob += _U64.pack(1 if frozen else 0)
        blob += _U64.pack(offset)
        payloads.append(data)
        offset += data.nbytes
    for data in payloads:
        blob += data.tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def load(path) -> list[CheckpointEntry]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError(
            f"bad checkpoint magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def u64():
        nonlocal pos
        if pos + 8 > len(blob):
            raise IntegrityError("checkpoint truncated inside manifest")
        val = _U64.unpack_from(blob, pos)[0]
        pos += 8
        return val

    count = u64()
    entries = []
    for _ in range(count):
        name_len = u64()
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        ndim = u64()
        shape = tuple(u64() for _ in range(ndim))
        frozen = bool(u64())
        offset = u64()
        entries.append((name, shape, frozen, offset))

    out = []
    for name, shape, frozen, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(blob):
            raise IntegrityError(f"payload for {name!r} runs past end of file")
        array = np.frombuffer(blob, dtype="<f8", count=n,
                              offset=offset).reshape(shape).copy()
        out.append(CheckpointEntry(name, shape, frozen, array))
    return out


def load_into(store: ParamStore, path) -> None:
    """Restore a checkpoint into an already-built store; everything about
    the two parameter sets must agree or the load is refused."""
    entries = load(path)
    current = list(store.items())
    if len(entries) != len(current):
        raise IntegrityError(
            f"checkpoint has {len(entries)} tensors, model has {len(current)}")
    for entry, (name, tensor, frozen) in zip(entries, current):
        if entry.name != name:
            raise IntegrityError(
                f"checkpoint tensor {entry.name!r} does not match model {name!r}")
        if entry.shape != tensor.data.shape:
            raise IntegrityError(
                f"{name}: checkpoint shape {entry.shape} vs model "
                f"{tensor.data.shape}")
        if entry.frozen != frozen:
            raise IntegrityError(f"{name}: frozen flag mismatch")
        tensor.data[...] = entry.array
