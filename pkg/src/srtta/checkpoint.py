"""Binary checkpoint and freeze-mask serialization.

Checkpoint layout (all integers little-endian):
  magic "SRTT" | u32 version | u32 json-length | architecture-descriptor JSON |
  per parameter in lexicographic name order:
    u32 name-length | UTF-8 name | u8 rank | u32 dims... | float32 data

Freeze masks are stored in a sibling format (magic "SRTM"): per parameter in
lexicographic name order, a bit-packed little-endian mask aligned to the
flattened parameter.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SRTT"
MASK_MAGIC = b"SRTM"
VERSION = 1


class CheckpointError(IOError):
    pass


def write_checkpoint(path, descriptor: dict, params: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(desc)) + desc
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    (dlen,) = struct.unpack("<I", r.take(4))
    descriptor = json.loads(r.take(dlen).decode("utf-8"))
    params: dict[str, np.ndarray] = {}
    prev = None
    while not r.done():
        (nlen,) = struct.unpack("<I", r.take(4))
        name = r.take(nlen).decode("utf-8")
        if prev is not None and name <= prev:
            raise CheckpointError(f"{path}: parameter {name!r} out of order")
        prev = name
        (rank,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
    return descriptor, params


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.blob)


def write_masks(path, masks: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MASK_MAGIC
    blob += struct.pack("<I", VERSION)
    for name in sorted(masks):
        flat = np.asarray(masks[name]).astype(bool).ravel()
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb)) + nb
        blob += struct.pack("<I", flat.size)
        blob += np.packbits(flat, bitorder="little").tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def read_masks(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(4) != MASK_MAGIC:
        raise CheckpointError(f"{path}: bad mask magic")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported mask version {version}")
    masks: dict[str, np.ndarray] = {}
    while not r.done():
        (nlen,) = struct.unpack("<I", r.take(4))
        name = r.take(nlen).decode("utf-8")
        (size,) = struct.unpack("<I", r.take(4))
        nbytes = (size + 7) // 8
        bits = np.unpackbits(np.frombuffer(r.take(nbytes), dtype=np.uint8),
                             bitorder="little")[:size]
        masks[name] = bits.astype(bool)
    return masks


def save_model(path, model) -> None:
    """Serialize any module exposing descriptor() and named_parameters()."""
    params = {n: p.detach().cpu().numpy() for n, p in model.named_parameters()}
    write_checkpoint(path, model.descriptor(), params)


def load_into(model, path) -> None:
    import torch

    descriptor, params = read_checkpoint(path)
    own = dict(model.named_parameters())
    if set(own) != set(params):
        unknown = set(params) - set(own)
        missing = set(own) - set(params)
        raise CheckpointError(f"{path}: parameter set mismatch "
                              f"(unknown={sorted(unknown)}, missing={sorted(missing)})")
    if descriptor != model.descriptor():
        raise CheckpointError(f"{path}: architecture descriptor mismatch")
    with torch.no_grad():
        for n, p in own.items():
            p.copy_(torch.from_numpy(params[n]).to(p.dtype))
