"""Binary envelope persistence shared by operator caches and field snapshots.

On-disk layout, all integers little-endian:

    magic   4 bytes  b"RGFO"
    version u32      currently 1
    kind    u32      1 = operator, 2 = svd, 3 = field
    prov    u64      provenance hash (FNV-1a of a canonical description)
    length  u64      payload byte count
    payload length bytes
    check   u64      FNV-1a of the payload

Writes are atomic (temp file then rename); every verification failure on
read raises its own exception type.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import (BadChecksumError, BadKindError, BadLengthError, BadMagicError,
                     BadProvenanceError, BadVersionError, ConfigurationError)

MAGIC = b"RGFO"
VERSION = 1
KINDS = {"operator": 1, "svd": 2, "field": 3}
_HEADER = struct.Struct("<4sIIQQ")
_TAIL = struct.Struct("<Q")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def provenance_hash(description) -> int:
    """FNV-1a of a canonical JSON rendering of a provenance description."""
    blob = json.dumps(description, sort_keys=True, default=_canonical).encode()
    return fnv1a64(blob)


def _canonical(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not canonicalizable: {type(obj)}")


def write_envelope(path, kind, provenance, payload: bytes):
    """Write payload under the envelope layout, atomically replacing ``path``."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown envelope kind {kind!r}")
    header = _HEADER.pack(MAGIC, VERSION, KINDS[kind], int(provenance) & 0xFFFFFFFFFFFFFFFF,
                          len(payload))
    tail = _TAIL.pack(fnv1a64(payload))
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rgfo-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            fh.write(tail)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_envelope(path, expected_kind, expected_provenance=None) -> bytes:
    """Read and fully verify an envelope, returning the payload bytes."""
    if expected_kind not in KINDS:
        raise ConfigurationError(f"unknown envelope kind {expected_kind!r}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + _TAIL.size:
        raise BadLengthError(f"{path}: file shorter than the envelope header")
    magic, version, kind, prov, length = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if kind != KINDS[expected_kind]:
        raise BadKindError(f"{path}: kind {kind} != expected {KINDS[expected_kind]}")
    if expected_provenance is not None and prov != (int(expected_provenance) & 0xFFFFFFFFFFFFFFFF):
        raise BadProvenanceError(
            f"{path}: provenance {prov:#018x} does not match the requested inputs")
    want = _HEADER.size + length + _TAIL.size
    if len(blob) != want:
        raise BadLengthError(f"{path}: {len(blob)} bytes on disk, envelope declares {want}")
    payload = blob[_HEADER.size:_HEADER.size + length]
    (check,) = _TAIL.unpack_from(blob, _HEADER.size + length)
    if fnv1a64(payload) != check:
        raise BadChecksumError(f"{path}: payload checksum mismatch")
    return payload


# -- typed payload helpers ---------------------------------------------------

def pack_complex_matrix(mat: np.ndarray) -> bytes:
    """rows u64, cols u64, then row-major (re, im) float64 pairs."""
    mat = np.ascontiguousarray(mat, dtype=complex)
    rows, cols = mat.shape
    head = struct.pack("<QQ", rows, cols)
    inter = np.empty((rows, cols, 2))
    inter[..., 0] = mat.real
    inter[..., 1] = mat.imag
    return head + inter.astype("<f8").tobytes()


def unpack_complex_matrix(payload: bytes) -> np.ndarray:
    if len(payload) < 16:
        raise BadLengthError("matrix payload shorter than its dimension header")
    rows, cols = struct.unpack_from("<QQ", payload, 0)
    need = 16 + rows * cols * 16
    if len(payload) != need:
        raise BadLengthError(f"matrix payload {len(payload)} bytes, dimensions need {need}")
    flat = np.frombuffer(payload, dtype="<f8", offset=16).reshape(rows, cols, 2)
    return flat[..., 0] + 1j * flat[..., 1]


def pack_arrays(**arrays) -> bytes:
    """Named float64/complex128 arrays: a small JSON directory plus raw bytes."""
    order = sorted(arrays)
    meta = []
    chunks = []
    for name in order:
        a = np.ascontiguousarray(arrays[name])
        if a.dtype == complex:
            raw = np.empty(a.shape + (2,))
            raw[..., 0] = a.real
            raw[..., 1] = a.imag
            blob = raw.astype("<f8").tobytes()
            dtype = "c16"
        else:
            blob = a.astype("<f8").tobytes()
            dtype = "f8"
        meta.append({"name": name, "shape": list(a.shape), "dtype": dtype, "bytes": len(blob)})
        chunks.append(blob)
    head = json.dumps(meta, sort_keys=True).encode()
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def unpack_arrays(payload: bytes) -> dict:
    if len(payload) < 8:
        raise BadLengthError("array payload shorter than its directory header")
    (hlen,) = struct.unpack_from("<Q", payload, 0)
    meta = json.loads(payload[8:8 + hlen].decode())
    out = {}
    offset = 8 + hlen
    for entry in meta:
        blob = payload[offset:offset + entry["bytes"]]
        if len(blob) != entry["bytes"]:
            raise BadLengthError("array payload truncated")
        flat = np.frombuffer(blob, dtype="<f8")
        if entry["dtype"] == "c16":
            flat = flat.reshape(entry["shape"] + [2])
            out[entry["name"]] = flat[..., 0] + 1j * flat[..., 1]
        else:
            out[entry["name"]] = flat.reshape(entry["shape"]).copy()
        offset += entry["bytes"]
    if offset != len(payload):
        raise BadLengthError("array payload carries trailing bytes")
    return out
