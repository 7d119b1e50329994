"""Binary checkpoint format.

Layout (little-endian throughout):

    magic   4 bytes  b"RPL1"
    version u32
    digest  u16 length + utf-8 config digest
    count   u32 named arrays, each:
        name   u16 length + utf-8
        dtype  u8 code (0 = float64, 1 = float32, 2 = int64)
        ndim   u8, then ndim x u32 dims
        payload little-endian array bytes
    sha256 of everything above (32 bytes)

Round-trips are bit-exact; a single flipped payload byte fails the checksum.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import ChecksumError, FormatError

MAGIC = b"RPL1"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_checkpoint(path, arrays, config_digest=""):
    """Write named arrays (dict name -> ndarray) with a trailing checksum."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    dig = config_digest.encode()
    out += struct.pack("<H", len(dig)) + dig
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        # np.ascontiguousarray promotes 0-d arrays to shape (1,); keep the
        # original shape so scalars round-trip exactly.
        shape = np.asarray(arr).shape
        arr = np.ascontiguousarray(arr).reshape(shape)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise FormatError(f"unsupported dtype {arr.dtype} for array '{name}'")
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_checkpoint(path):
    """Return (arrays dict, config digest); validates magic, version, checksum."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 + 4 + 2 + 4 + 32:
        raise FormatError(f"{path}: too short to be a checkpoint")
    body, checksum = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise ChecksumError(f"{path}: checksum mismatch")
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(body):
            raise FormatError(f"{path}: truncated record")
        chunk = body[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (dlen,) = struct.unpack("<H", take(2))
    digest = take(dlen).decode()
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = np.dtype(_DTYPES[code])
        payload = take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize)
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    if off != len(body):
        raise FormatError(f"{path}: {len(body) - off} stray bytes before checksum")
    return arrays, digest
