"""
HLLC archive container.

    offset  size  field
    0       4     magic b"HLLC"
    4       1     format version
    5       1     model id
    6       1     likelihood precision r
    7       1     log2 of the latent bin count
    8       4     image count (u32 LE)
    12      8     payload word count (u64 LE)
    20      4n    payload: flattened message, u32 LE words
    20+4n   4     CRC-32 of the payload bytes (u32 LE)
"""
import struct
import zlib
from typing import NamedTuple

import numpy as np

MAGIC = b"HLLC"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBIQ")
HEADER_BYTES = _HEADER.size
CRC_BYTES = 4


class ContainerError(ValueError):
    pass


class Archive(NamedTuple):
    model_id: int
    precision: int
    bins_log2: int
    count: int
    words: np.ndarray


def pack(archive):
    words = np.asarray(archive.words, dtype="<u4")
    payload = words.tobytes()
    header = _HEADER.pack(MAGIC, VERSION, archive.model_id, archive.precision,
                          archive.bins_log2, archive.count, len(words))
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def unpack(data):
    """Parse and verify an archive; nothing is decoded if any check fails."""
    data = bytes(data)
    if len(data) < HEADER_BYTES + CRC_BYTES:
        raise ContainerError("archive too short")
    magic, version, model_id, precision, bins_log2, count, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("bad magic: not an HLLC archive")
    if version != VERSION:
        raise ContainerError(f"unsupported format version {version}")
    end = HEADER_BYTES + 4 * n
    if len(data) != end + CRC_BYTES:
        raise ContainerError("archive length does not match its word count")
    payload = data[HEADER_BYTES:end]
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(payload) != crc:
        raise ContainerError("payload CRC mismatch")
    words = np.frombuffer(payload, dtype="<u4").astype(np.uint32)
    return Archive(model_id, precision, bins_log2, count, words)
