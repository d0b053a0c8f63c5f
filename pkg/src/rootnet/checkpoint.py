"""Bit-exact checkpoint serialization.

File layout: magic "RNFCKPT1", a little-endian uint32 length prefix, a
UTF-8 JSON header (version, architecture, parameter names and shapes in
order), the concatenated little-endian float32 payloads in header order,
and a trailing 64-bit FNV-1a checksum of all preceding bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .tensor import Tensor
from .unet import ArchSpec, ParamSet

MAGIC = b"RNFCKPT1"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FNV_MASK = 0xFFFFFFFFFFFFFFFF


class CheckpointError(IOError):
    """Base class for checkpoint read failures."""


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def fnv1a64(data: bytes, state: int = _FNV_OFFSET) -> int:
    h = state
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _FNV_MASK
    return h


try:  # the hash is byte-sequential; JIT it for multi-MB payloads
    from numba import njit

    @njit(cache=True)
    def _fnv1a64_u8(arr, state):  # pragma: no cover - exercised via _checksum
        h = state
        for i in range(arr.size):
            h = ((h ^ np.uint64(arr[i])) * np.uint64(_FNV_PRIME)) & np.uint64(_FNV_MASK)
        return h

    def _fnv_chunk(chunk: bytes, state: int) -> int:
        return int(_fnv1a64_u8(np.frombuffer(chunk, dtype=np.uint8), np.uint64(state)))

except ImportError:  # pragma: no cover
    _fnv_chunk = fnv1a64


def _checksum(chunks) -> int:
    h = _FNV_OFFSET
    for chunk in chunks:
        h = _fnv_chunk(chunk, h)
    return h


def save(params: ParamSet, spec: ArchSpec, path) -> None:
    entries = []
    payloads = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"version": FORMAT_VERSION, "spec": spec.to_dict(), "params": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = [MAGIC, struct.pack("<I", len(header)), header, *payloads]
    digest = _checksum(body)
    with open(path, "wb") as f:
        for chunk in body:
            f.write(chunk)
        f.write(struct.pack("<Q", digest))


def load(path) -> tuple[ArchSpec, ParamSet]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 8:
        raise TruncatedError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: bad magic bytes (not a checkpoint or wrong format)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if header_end + 8 > len(blob):
        raise TruncatedError(f"{path}: truncated header")
    header = json.loads(blob[len(MAGIC) + 4 : header_end].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {header.get('version')} != {FORMAT_VERSION}")
    # size check first so truncation is reported as such, not as corruption
    payload_bytes = sum(int(np.prod(e["shape"])) * 4 for e in header["params"])
    expected = header_end + payload_bytes + 8
    if len(blob) < expected:
        raise TruncatedError(f"{path}: {expected - len(blob)} bytes missing from payload")
    if len(blob) > expected:
        raise TruncatedError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    (stored_digest,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if _checksum([blob[:-8]]) != stored_digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt checkpoint)")
    spec = ArchSpec.from_dict(header["spec"])
    offset = header_end
    items = []
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape)
        items.append((entry["name"], Tensor(arr.copy(), requires_grad=True)))
        offset += int(np.prod(shape)) * 4
    return spec, ParamSet(items)


def check_compatible(spec: ArchSpec, params: ParamSet, target_shapes: dict) -> None:
    """Raise ShapeMismatchError naming the first offending parameter."""
    for name, shape in target_shapes.items():
        if name not in params:
            raise ShapeMismatchError(f"checkpoint missing parameter {name!r}")
        have = tuple(params[name].data.shape)
        if have != tuple(shape):
            raise ShapeMismatchError(f"parameter {name!r}: checkpoint shape {have} != expected {tuple(shape)}")
