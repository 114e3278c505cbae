"""Byte layout for upload packets and broadcast payloads.

A message is a fixed header followed by length-prefixed blobs::

    blob := u32 body_length | body
    body := u8 tag | u32 dims[ndim] | values (little-endian, row-major)

Codebook blobs (tag ``s``/``c``) carry ``L, M, d`` and float64 values. Code-ID
blobs (tag ``S``/``C``) carry ``n_items, L`` and int32 values. The parameter
count of a message is the number of values across its blobs.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FLOAT_WIDTH = 8
INT_WIDTH = 4

TAG_SEMANTIC_BOOK = b"s"
TAG_COLLAB_BOOK = b"c"
TAG_SEMANTIC_IDS = b"S"
TAG_COLLAB_IDS = b"C"

_FLOAT = np.dtype("<f8")
_INT = np.dtype("<i4")

_SPECS = {
    TAG_SEMANTIC_BOOK: (3, _FLOAT),
    TAG_COLLAB_BOOK: (3, _FLOAT),
    TAG_SEMANTIC_IDS: (2, _INT),
    TAG_COLLAB_IDS: (2, _INT),
}


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class Blob:
    tag: bytes
    array: np.ndarray

    @property
    def n_values(self) -> int:
        return int(self.array.size)


def encode_blob(tag: bytes, array: np.ndarray) -> bytes:
    ndim, dtype = _SPECS[tag]
    array = np.ascontiguousarray(array, dtype=dtype)
    if array.ndim != ndim:
        raise WireError(f"blob {tag!r} expects {ndim} dims, got {array.shape}")
    body = tag + struct.pack(f"<{ndim}I", *array.shape) + array.tobytes()
    return struct.pack("<I", len(body)) + body


def decode_blobs(buf: bytes, offset: int) -> list[Blob]:
    blobs = []
    while offset < len(buf):
        if offset + 4 > len(buf):
            raise WireError("truncated blob length")
        (length,) = struct.unpack_from("<I", buf, offset)
        body = buf[offset + 4: offset + 4 + length]
        if len(body) != length:
            raise WireError("truncated blob body")
        tag = body[:1]
        if tag not in _SPECS:
            raise WireError(f"unknown blob tag {tag!r}")
        ndim, dtype = _SPECS[tag]
        shape = struct.unpack_from(f"<{ndim}I", body, 1)
        values = np.frombuffer(body, dtype=dtype, offset=1 + 4 * ndim)
        if values.size != int(np.prod(shape)):
            raise WireError(f"blob {tag!r} holds {values.size} values for shape {shape}")
        blobs.append(Blob(tag, values.reshape(shape).astype(np.float64 if dtype == _FLOAT else np.int64)))
        offset += 4 + length
    return blobs


def blob_header_bytes(tag: bytes) -> int:
    return 4 + 1 + 4 * _SPECS[tag][0]


def value_width(tag: bytes) -> int:
    return FLOAT_WIDTH if _SPECS[tag][1] == _FLOAT else INT_WIDTH
