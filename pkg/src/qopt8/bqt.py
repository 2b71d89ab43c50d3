"""Binary file format for block-quantized tensors.

Layout (little-endian)::

    magic       4 bytes  b"BQT1"
    version     u16
    id_len      u16, followed by id_len ASCII bytes of codebook id
    block_size  u32
    length      u64
    absmax      ceil(length / block_size) float32
    codes       length uint8
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .quant import BlockQuantizedTensor

MAGIC = b"BQT1"
VERSION = 1


def to_bytes(q: BlockQuantizedTensor) -> bytes:
    cid = q.codebook_id.encode("ascii")
    header = MAGIC + struct.pack("<HH", VERSION, len(cid)) + cid + struct.pack("<IQ", q.block_size, q.length)
    return header + q.absmax.astype("<f4").tobytes() + q.codes.astype(np.uint8).tobytes()


def from_bytes(buf: bytes) -> BlockQuantizedTensor:
    if buf[:4] != MAGIC:
        raise ValueError("not a BQT file (bad magic)")
    try:
        version, id_len = struct.unpack_from("<HH", buf, 4)
        if version != VERSION:
            raise ValueError(f"unsupported BQT version {version}")
        pos = 8
        cid = buf[pos:pos + id_len].decode("ascii")
        pos += id_len
        block_size, length = struct.unpack_from("<IQ", buf, pos)
        pos += 12
    except struct.error as e:
        raise ValueError(f"truncated BQT header: {e}") from None
    if block_size < 1:
        raise ValueError("BQT block_size must be >= 1")
    nb = math.ceil(length / block_size)
    expected = pos + 4 * nb + length
    if len(buf) != expected:
        raise ValueError(f"BQT payload size mismatch: expected {expected} bytes, got {len(buf)}")
    absmax = np.frombuffer(buf, dtype="<f4", count=nb, offset=pos).astype(np.float32)
    codes = np.frombuffer(buf, dtype=np.uint8, count=length, offset=pos + 4 * nb).copy()
    return BlockQuantizedTensor(codes, block_size, absmax, cid, length)


def save(q: BlockQuantizedTensor, path) -> None:
    Path(path).write_bytes(to_bytes(q))


def load(path) -> BlockQuantizedTensor:
    return from_bytes(Path(path).read_bytes())
