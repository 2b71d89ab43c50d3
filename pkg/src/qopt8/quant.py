"""Tensor-wide and block-wise absmax quantization against a codebook."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codebooks import Codebook

DEFAULT_BLOCK_SIZE = 2048

# below this many elements a thread pool costs more than it saves
_PARALLEL_MIN_ELEMENTS = 1 << 16


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("QOPT8_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


@dataclass
class TensorQuantized:
    codes: np.ndarray
    norm: float
    codebook_id: str
    length: int


@dataclass
class BlockQuantizedTensor:
    codes: np.ndarray
    block_size: int
    absmax: np.ndarray
    codebook_id: str
    length: int

    @property
    def num_blocks(self) -> int:
        return len(self.absmax)

    def nbytes(self) -> int:
        return self.codes.nbytes + self.absmax.nbytes


def nearest_code(x, codebook: Codebook):
    """Index of the closest codebook value; exact midpoint ties go to the lower index.

    Binary search for the insertion point, then compare the floor and ceiling
    neighbours. Works elementwise on arrays and returns uint8 codes.
    """
    xa = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xa)):
        raise ValueError("nearest_code input must be finite (got NaN or Inf)")
    v = codebook._values64
    hi = np.clip(np.searchsorted(v, xa, side="left"), 1, len(v) - 1)
    lo = hi - 1
    take_hi = (v[hi] - xa) < (xa - v[lo])
    codes = np.where(take_hi, hi, lo).astype(np.uint8)
    if codes.ndim == 0:
        return int(codes)
    return codes


def _as_flat32(T, codebook: Codebook) -> np.ndarray:
    flat = np.asarray(T, dtype=np.float32).ravel()
    if flat.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(flat)):
        raise ValueError("tensor contains NaN or Inf; refusing to quantize")
    if not codebook.signed and np.any(flat < 0):
        raise ValueError(f"codebook {codebook.id!r} is unsigned but the tensor has negative values")
    return flat


def _check_codebook(codebook_id: str, codebook: Codebook) -> None:
    if codebook_id != codebook.id:
        raise ValueError(f"codebook mismatch: data encoded with {codebook_id!r}, got {codebook.id!r}")


def _encode(x: np.ndarray, norm: np.ndarray, codebook: Codebook) -> np.ndarray:
    # x: (nb, B) float32, norm: (nb,) float32; zero-norm rows encode value 0
    x64 = x.astype(np.float64)
    n64 = norm.astype(np.float64)[:, None]
    scaled = np.divide(x64, n64, out=np.zeros_like(x64), where=n64 > 0)
    return nearest_code(scaled, codebook).reshape(x.shape)


def quantize_tensor(T, codebook: Codebook) -> TensorQuantized:
    flat = _as_flat32(T, codebook)
    norm = np.abs(flat).max()
    codes = _encode(flat[None, :], np.array([norm], dtype=np.float32), codebook)[0]
    return TensorQuantized(codes, float(norm), codebook.id, flat.size)


def dequantize_tensor(q: TensorQuantized, codebook: Codebook) -> np.ndarray:
    _check_codebook(q.codebook_id, codebook)
    return codebook.values[q.codes] * np.float32(q.norm)


def _encode_blocks(blocks: np.ndarray, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    absmax = np.abs(blocks).max(axis=1)
    return _encode(blocks, absmax, codebook), absmax


def quantize_blockwise(
    T, codebook: Codebook, block_size: int | None = DEFAULT_BLOCK_SIZE, threads: int | None = None
) -> BlockQuantizedTensor:
    """Chunk T into blocks of block_size elements and absmax-quantize each one.

    block_size=None means a single block spanning the whole tensor (tensor-wide
    normalization). The last block may be short. With threads > 1, groups of
    blocks are encoded concurrently; output is identical for any thread count.
    """
    flat = _as_flat32(T, codebook)
    n = flat.size
    B = n if block_size is None else int(block_size)
    if B < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    nb = math.ceil(n / B)
    # zero padding never changes an absmax and is dropped after encoding
    padded = np.zeros(nb * B, dtype=np.float32)
    padded[:n] = flat
    blocks = padded.reshape(nb, B)

    workers = resolve_threads(threads)
    if workers == 1 or nb == 1 or n < _PARALLEL_MIN_ELEMENTS:
        codes, absmax = _encode_blocks(blocks, codebook)
    else:
        bounds = np.linspace(0, nb, min(workers, nb) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _encode_blocks(blocks[s[0]:s[1]], codebook), zip(bounds[:-1], bounds[1:])))
        codes = np.concatenate([p[0] for p in parts])
        absmax = np.concatenate([p[1] for p in parts])
    return BlockQuantizedTensor(codes.ravel()[:n].copy(), B, absmax.astype(np.float32), codebook.id, n)


def dequantize_blockwise(q: BlockQuantizedTensor, codebook: Codebook) -> np.ndarray:
    _check_codebook(q.codebook_id, codebook)
    n, B = q.length, q.block_size
    if len(q.codes) != n or len(q.absmax) != math.ceil(n / B):
        raise ValueError("corrupt BlockQuantizedTensor: codes/absmax sizes do not match length")
    if q.codes.size and int(q.codes.max()) >= len(codebook):
        raise ValueError("code index out of range for codebook")
    scale = np.repeat(q.absmax.astype(np.float32), B)[:n]
    return codebook.values[q.codes] * scale


def round_trip_bound(codebook: Codebook, absmax) -> np.ndarray:
    """Worst-case absolute round-trip error: half the widest codebook gap times absmax."""
    return 0.5 * codebook.max_gap() * np.asarray(absmax, dtype=np.float64)
