"""Flat binary checkpoint container.

Layout (little-endian)::

    b"PCNCKPT\\0"  magic
    u16           format version
    u32 + bytes   UTF-8 JSON metadata (dims, activation tags, clamp flags, ...)
    u32           tensor count
    per tensor:   u16 + bytes name, u8 ndim, ndim * u64 shape, float64 row-major payload

Float32 tensors are widened to float64 on disk and narrowed on load, which
round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import PCNetwork

MAGIC = b"PCNCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos} (needed {nbytes} more)")
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<I", take(4))
    meta = json.loads(take(mlen).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
    return meta, tensors


def save_checkpoint(path, net: PCNetwork, memory=None, extra: dict | None = None) -> None:
    meta = {
        "kind": "pcnetwork",
        "dims": list(net.dims),
        "activations": [a.tag for a in net.activations],
        "clamp_input": net.clamp_input,
        "clamp_output": net.clamp_output,
        "dtype": np.dtype(net.dtype).name,
        "extra": extra or {},
    }
    tensors = {}
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        tensors[f"W{l}"] = w
        tensors[f"b{l}"] = b
    if memory is not None:
        meta["memory"] = memory.meta()
        tensors.update(memory.tensors())
    write_container(path, meta, tensors)


def load_checkpoint(path):
    """Returns ``(net, memory_or_None, extra)``."""
    meta, tensors = read_container(path)
    if meta.get("kind") != "pcnetwork":
        raise CheckpointError(f"{path}: not a network checkpoint")
    dt = np.dtype(meta["dtype"])
    L = len(meta["dims"]) - 1
    net = PCNetwork(
        meta["dims"],
        [tensors[f"W{l}"].astype(dt) for l in range(L)],
        [tensors[f"b{l}"].astype(dt) for l in range(L)],
        meta["activations"],
        meta["clamp_input"],
        meta["clamp_output"],
    )
    memory = None
    if "memory" in meta:
        from .hopfield import HopfieldMemory

        memory = HopfieldMemory.from_parts(meta["memory"], tensors)
    return net, memory, meta.get("extra", {})
