"""HTNS v1 tensor files and the named-tensor checkpoint container.

Tensor layout (little-endian)::

    0-3   magic b"HTNS"
    4     version (1)
    5     dtype code (1 = f32, 2 = f64, 3 = u8)
    6     ndim
    7     zero
    8...  ndim x u64 dims, then the row-major payload

A checkpoint is ``u32 count`` followed by ``count`` entries of
``u16 name length, UTF-8 name, embedded HTNS tensor``.
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"HTNS"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.uint8): 3}


class TensorFormatError(ValueError):
    """Base class for malformed HTNS data."""


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class BadDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def dump_tensor(f: BinaryIO, t: np.ndarray) -> None:
    t = np.asarray(t)
    code = _CODE_OF.get(t.dtype.newbyteorder("="))
    if code is None:
        raise BadDtypeError(f"unsupported dtype {t.dtype}")
    if t.ndim > 255:
        raise ValueError("too many dimensions")
    f.write(MAGIC + bytes([VERSION, code, t.ndim, 0]))
    f.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    f.write(np.ascontiguousarray(t, dtype=DTYPE_CODES[code]).tobytes())


def load_tensor(f: BinaryIO) -> np.ndarray:
    head = f.read(8)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BadMagicError("bad magic: not an HTNS tensor")
    if len(head) < 8:
        raise TruncatedPayloadError("truncated header")
    version, code, ndim = head[4], head[5], head[6]
    if version != VERSION:
        raise BadVersionError(f"unsupported HTNS version {version}")
    if code not in DTYPE_CODES:
        raise BadDtypeError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "shape"))
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(f, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def write_tensor(path: str | os.PathLike, t: np.ndarray) -> None:
    with open(path, "wb") as f:
        dump_tensor(f, t)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return load_tensor(f)


def write_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        dump_tensor(buf, t)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def read_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", _read_exact(f, 4, "entry count"))
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, n, "name").decode("utf-8")
            out[name] = load_tensor(f)
        if f.read(1):
            raise TensorFormatError("trailing bytes after last checkpoint entry")
    return out


def text_tensor(s: str) -> np.ndarray:
    """Store text as a u8 tensor (used for metadata entries)."""
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).copy()


def tensor_text(t: np.ndarray) -> str:
    return t.astype(np.uint8).tobytes().decode("utf-8")
