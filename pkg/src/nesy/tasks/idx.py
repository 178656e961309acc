"""IDX container (the classic MNIST file format)."""

import struct

import numpy as np

from nesy import errors

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def parse_idx(data: bytes):
    """Decode an unsigned-byte IDX payload.

    Image files (rank 3) come back as float64 in [0, 1]; label files as an
    int64 vector.
    """
    if len(data) < 4:
        raise errors.TruncatedPayload("IDX header shorter than 4 bytes")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise errors.BadMagic(f"unexpected IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise errors.TruncatedPayload("IDX dimension table is truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims))
    payload = data[header:]
    if len(payload) < expected:
        raise errors.TruncatedPayload(f"IDX payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)
    if magic == LABEL_MAGIC:
        return arr.astype(np.int64)
    return arr.astype(np.float64) / 255.0


def write_idx(array) -> bytes:
    """Encode uint8-range data; floats in [0, 1] are scaled to bytes."""
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.clip(np.rint(arr * 255.0), 0, 255)
    arr = arr.astype(np.uint8)
    magic = LABEL_MAGIC if arr.ndim == 1 else (0x00000800 | arr.ndim)
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def load_idx(path):
    with open(path, "rb") as fh:
        return parse_idx(fh.read())
