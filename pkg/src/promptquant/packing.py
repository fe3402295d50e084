"""Bit-exact packed storage for quantized tensors.

Blob layout (all integers little-endian):

    offset  size        field
    0       4           magic "QPRM"
    4       1           format version (1)
    5       1           bit width b
    6       8           element count N (unsigned)
    14      4           mu (IEEE-754 binary32)
    18      4           sigma (IEEE-754 binary32)
    22      2^b * 2     codebook centers (IEEE-754 binary16, ascending)
    ...     ceil(N*b/8) packed indices, LSB-first bit order

Index j occupies stream bits [j*b, (j+1)*b), least-significant bit of the
index first; stream bit p lives at bit (p % 8) of byte p // 8.  The final
partial byte is zero-padded in its high bits.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadMagic,
    IndexOverflow,
    LengthMismatch,
    Truncated,
    UnsupportedVersion,
)
from .quantizer import SUPPORTED_BITS, Codebook, DegenerateTensor, NormStats

MAGIC = b"QPRM"
VERSION = 1
HEADER_BYTES = 22
_HEADER = struct.Struct("<4sBBQff")


def _check_bits(b: int) -> None:
    if b not in SUPPORTED_BITS:
        raise DegenerateTensor(f"bits must be one of {SUPPORTED_BITS}, got {b}")


def payload_bytes(n: int, b: int) -> int:
    """Number of payload bytes needed for n packed b-bit indices."""
    return (n * b + 7) // 8


def pack(indices, b: int) -> bytes:
    """Pack integer indices into a b-bit LSB-first stream."""
    _check_bits(b)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        return b""
    if np.any(idx < 0) or np.any(idx >= (1 << b)):
        raise IndexOverflow(f"index out of range for {b}-bit packing")
    bits = ((idx[:, None] >> np.arange(b)) & 1).astype(np.uint8).reshape(-1)
    return np.packbits(bits, bitorder="little").tobytes()


def unpack(payload: bytes, n: int, b: int) -> np.ndarray:
    """Inverse of :func:`pack`; needs the element count to strip padding."""
    _check_bits(b)
    if n < 0:
        raise LengthMismatch("element count must be non-negative")
    expected = payload_bytes(n, b)
    if len(payload) != expected:
        raise LengthMismatch(
            f"payload is {len(payload)} bytes, expected {expected} for n={n}, b={b}"
        )
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    bits = bits[: n * b].reshape(n, b).astype(np.int64)
    return bits @ (1 << np.arange(b, dtype=np.int64))


def storage_bits(n: int, b: int) -> int:
    """Storage cost in bits: b*N for indices plus 2^b half-precision centers.

    Excludes this format's fixed 22-byte header, which is constant overhead.
    """
    _check_bits(b)
    if n < 1:
        raise LengthMismatch("element count must be >= 1")
    return b * n + (1 << b) * 16


def compression_ratio(n: int, b: int) -> float:
    """Size of a 16-bit-per-weight baseline over this format's size."""
    return 16 * n / storage_bits(n, b)


def serialize(cb: Codebook, indices) -> bytes:
    """Serialize a codebook plus per-element indices into a blob.

    Centers are stored at half precision (round-to-nearest-even); mu and
    sigma at single precision.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    header = _HEADER.pack(
        MAGIC, VERSION, cb.bits, idx.size, np.float32(cb.stats.mu), np.float32(cb.stats.sigma)
    )
    centers_f16 = cb.centers.astype(np.float16)
    return header + centers_f16.tobytes() + pack(idx, cb.bits)


def deserialize(blob: bytes) -> tuple[Codebook, np.ndarray]:
    """Parse a blob back into its codebook and index array."""
    if len(blob) < 4:
        raise Truncated(f"blob is {len(blob)} bytes, header needs {HEADER_BYTES}")
    if blob[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < HEADER_BYTES:
        raise Truncated(f"blob is {len(blob)} bytes, header needs {HEADER_BYTES}")
    _, version, b, n, mu, sigma = _HEADER.unpack(blob[:HEADER_BYTES])
    if version != VERSION:
        raise UnsupportedVersion(f"format version {version} not supported")
    _check_bits(b)
    k = 1 << b
    centers_end = HEADER_BYTES + 2 * k
    body_end = centers_end + payload_bytes(n, b)
    if len(blob) < body_end:
        raise Truncated(f"blob is {len(blob)} bytes, format declares {body_end}")
    centers = np.frombuffer(blob[HEADER_BYTES:centers_end], dtype="<f2").astype(np.float64)
    cb = Codebook(bits=b, centers=centers, stats=NormStats(mu=float(mu), sigma=float(sigma)))
    idx = unpack(blob[centers_end:body_end], n, b)
    return cb, idx
