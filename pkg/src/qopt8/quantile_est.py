"""Chunked streaming quantile estimation.

Values are buffered into fixed-size chunks. Each full chunk is sorted, its
2**k midpoint quantiles are extracted from the chunk's empirical CDF, and the
per-chunk estimates are averaged. ``exact_quantiles`` is the full-sort oracle.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 4096
DEFAULT_K = 8
_SLAB_VALUES = 1 << 18


class InsufficientDataError(ValueError):
    pass


def midpoint_probabilities(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Probability pairs (i/(2**k+1), (i+1)/(2**k+1)) for i = 0..2**k-1."""
    n = 2**k
    i = np.arange(n, dtype=np.float64)
    return i / (n + 1), (i + 1) / (n + 1)


def _chunk_quantiles(sorted_chunks: np.ndarray, k: int) -> np.ndarray:
    """Midpoint quantiles of each row of an (m, C) array of sorted chunks."""
    C = sorted_chunks.shape[1]
    lo_p, hi_p = midpoint_probabilities(k)
    p = np.concatenate([lo_p, hi_p[-1:]])
    # linear interpolation between order statistics at position p*(C-1)
    pos = p * (C - 1)
    idx = np.minimum(np.floor(pos).astype(np.int64), C - 1)
    nxt = np.minimum(idx + 1, C - 1)
    frac = pos - idx
    qx = sorted_chunks[:, idx] * (1.0 - frac) + sorted_chunks[:, nxt] * frac
    return 0.5 * (qx[:, :-1] + qx[:, 1:])


class StreamingQuantileEstimator:
    """Mean of per-chunk eCDF quantiles with compensated accumulation.

    A trailing partial chunk is never folded in; ``finalize`` reports it in
    ``discarded`` instead.
    """

    def __init__(self, chunk_capacity: int = DEFAULT_CHUNK, k: int = DEFAULT_K):
        if chunk_capacity < 2:
            raise ValueError("chunk_capacity must be >= 2")
        if not 1 <= k <= 16:
            raise ValueError("k must be in [1, 16]")
        self.chunk_capacity = int(chunk_capacity)
        self.k = int(k)
        self.running_sum = np.zeros(2**k, dtype=np.float64)
        self._compensation = np.zeros(2**k, dtype=np.float64)
        self.chunk_count = 0
        self.discarded = 0
        self._buffer = np.empty(0, dtype=np.float64)

    @property
    def buffer(self) -> np.ndarray:
        return self._buffer

    @property
    def total_observed(self) -> int:
        return self.chunk_count * self.chunk_capacity + self._buffer.size

    def _accumulate(self, rows: np.ndarray) -> None:
        # Kahan summation keeps chunk order effects at the rounding level
        s, c = self.running_sum, self._compensation
        for row in rows:
            y = row - c
            t = s + y
            c = (t - s) - y
            s = t
        self.running_sum, self._compensation = s, c
        self.chunk_count += len(rows)

    def observe(self, values) -> "StreamingQuantileEstimator":
        v = np.asarray(values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("observed values must be finite")
        data = np.concatenate([self._buffer, v]) if self._buffer.size else v
        C = self.chunk_capacity
        full = data.size // C
        # sort a bounded slab of chunks at a time to keep the working set small
        step = max(1, _SLAB_VALUES // C)
        for start in range(0, full, step):
            stop = min(full, start + step)
            chunks = np.sort(data[start * C: stop * C].reshape(stop - start, C), axis=1)
            self._accumulate(_chunk_quantiles(chunks, self.k))
        self._buffer = data[full * C:].copy()
        return self

    def finalize(self) -> np.ndarray:
        if self.chunk_count == 0:
            raise InsufficientDataError(
                f"no complete chunk of {self.chunk_capacity} values observed ({self._buffer.size} buffered)"
            )
        self.discarded = self._buffer.size
        if self.discarded:
            log.debug("discarding %d values from a partial final chunk", self.discarded)
        # averaging keeps order in exact arithmetic; the sort only fixes rounding inversions
        return np.sort((self.running_sum - self._compensation) / self.chunk_count)

    def merge(self, other: "StreamingQuantileEstimator") -> "StreamingQuantileEstimator":
        """Combine two estimators over disjoint streams into a new one.

        Buffered (partial-chunk) values of both sides are carried over.
        """
        if (other.chunk_capacity, other.k) != (self.chunk_capacity, self.k):
            raise ValueError("can only merge estimators with equal chunk_capacity and k")
        out = StreamingQuantileEstimator(self.chunk_capacity, self.k)
        out.running_sum = self.running_sum + other.running_sum
        out._compensation = self._compensation + other._compensation
        out.chunk_count = self.chunk_count + other.chunk_count
        out.observe(np.concatenate([self._buffer, other._buffer]))
        return out


def exact_quantiles(data, k: int = DEFAULT_K) -> np.ndarray:
    """Midpoint quantiles of the full sample (sort-based oracle)."""
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("exact_quantiles needs a nonempty sample")
    lo_p, hi_p = midpoint_probabilities(k)
    return 0.5 * (np.quantile(x, lo_p, method="linear") + np.quantile(x, hi_p, method="linear"))
