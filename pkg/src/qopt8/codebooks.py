"""Quantization codebooks: sorted tables of representable values in [-1, 1] or [0, 1].

Five kinds are provided: linear, signed dynamic tree, unsigned dynamic,
inverse dynamic and quantile. Tree kinds are fixed 8-bit layouts; every
codebook is materialized as an explicit float32 value table so one
nearest-value codec path serves all of them.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

MAX_CODES = 256

# number of leading-zero buckets in the 8-bit tree layouts
TREE_DEPTH = 7


class CodebookKind(str, enum.Enum):
    LINEAR = "linear"
    DYNAMIC_TREE_SIGNED = "dynamic-signed"
    DYNAMIC_UNSIGNED = "dynamic-unsigned"
    INVERSE_DYNAMIC = "inverse-dynamic"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class Codebook:
    values: np.ndarray
    signed: bool
    kind: CodebookKind
    id: str
    _values64: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        v64 = values.astype(np.float64)
        v64.setflags(write=False)
        object.__setattr__(self, "_values64", v64)
        validate(self)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def zero_code(self) -> int:
        return int(np.flatnonzero(self.values == 0.0)[0])

    def max_gap(self) -> float:
        return float(np.diff(self._values64).max())

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.id, self.values.tobytes()))


def validate(cb: Codebook) -> None:
    v = cb.values
    if not 2 <= len(v) <= MAX_CODES:
        raise ValueError(f"codebook must hold 2..{MAX_CODES} values, got {len(v)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("codebook values must be finite")
    if not np.all(np.diff(v) > 0):
        raise ValueError("codebook values must be strictly increasing")
    if v[-1] != 1.0:
        raise ValueError("codebook maximum must be exactly 1.0")
    if cb.signed and v[0] != -1.0:
        raise ValueError("signed codebook minimum must be exactly -1.0")
    if not cb.signed and v[0] < 0.0:
        raise ValueError("unsigned codebook must not contain negative values")
    if not np.any(v == 0.0):
        raise ValueError("codebook must contain 0.0")


def build_linear(signed: bool, bits: int = 8) -> Codebook:
    """Evenly spaced grid; signed grids use 2**bits - 1 points so they stay symmetric."""
    if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 8:
        raise ValueError(f"bits must be an integer in [2, 8], got {bits!r}")
    if signed:
        half = 2 ** (bits - 1) - 1
        values = np.arange(-half, half + 1, dtype=np.float64) / half
    else:
        top = 2**bits - 1
        values = np.arange(top + 1, dtype=np.float64) / top
    sign = "signed" if signed else "unsigned"
    return Codebook(values, signed, CodebookKind.LINEAR, f"linear-{sign}-{bits}")


def _decade_magnitudes(decade: int, fraction_bits: int) -> np.ndarray:
    # 10**-decade * (0.1 + 0.9 * (j + 1) / L), written as an exact ratio so the
    # top of every decade is exactly 10**-decade
    n = 2**fraction_bits
    j = np.arange(n, dtype=np.float64)
    return (n + 9.0 * (j + 1.0)) / (10.0 * n) / 10.0**decade


def _tree(buckets: list[tuple[int, int]], signed: bool) -> np.ndarray:
    mags = np.concatenate([_decade_magnitudes(d, f) for d, f in buckets])
    mags = np.unique(mags)
    if signed:
        return np.concatenate([-mags[::-1], [0.0], mags])
    return np.concatenate([[0.0], mags])


def build_dynamic_tree_signed() -> Codebook:
    """Sign bit, unary decade exponent, indicator bit, linear fraction.

    Bucket z (z leading zeros) covers (10**-(z+1), 10**-z] with 2**(6-z) codes.
    """
    buckets = [(z, 6 - z) for z in range(TREE_DEPTH)]
    return Codebook(_tree(buckets, True), True, CodebookKind.DYNAMIC_TREE_SIGNED, "dynamic-signed")


def build_dynamic_unsigned() -> Codebook:
    """The sign bit becomes an extra fraction bit: bucket z gets 2**(7-z) codes on [0, 1]."""
    buckets = [(z, 7 - z) for z in range(TREE_DEPTH)]
    return Codebook(_tree(buckets, False), False, CodebookKind.DYNAMIC_UNSIGNED, "dynamic-unsigned")


def build_inverse_dynamic() -> Codebook:
    """Signed tree with the exponent ladder reversed.

    Zero-count z maps to decade 10**-(6-z), so the smallest decade carries the
    most fraction bits and the single code of the last bucket is 1.0.
    """
    buckets = [(TREE_DEPTH - 1 - z, 6 - z) for z in range(TREE_DEPTH)]
    return Codebook(_tree(buckets, True), True, CodebookKind.INVERSE_DYNAMIC, "inverse-dynamic")


def build_quantile(quantiles, signed: bool, codebook_id: str | None = None) -> Codebook:
    """Codebook from estimated quantiles, rescaled by their absolute maximum.

    The result always contains 0 and the domain endpoints. When adding them
    would exceed 256 entries, each forced point replaces the nearest existing one.
    """
    q = np.asarray(quantiles, dtype=np.float64).ravel()
    if q.size < 1 or q.size > MAX_CODES:
        raise ValueError(f"expected 1..{MAX_CODES} quantiles, got {q.size}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quantiles must be finite")
    if np.any(np.diff(q) < 0):
        raise ValueError("quantiles must be monotone nondecreasing")
    if not signed and q[0] < 0:
        raise ValueError("unsigned quantile codebook needs nonnegative quantiles")

    scale = np.abs(q).max()
    values = q / scale if scale > 0 else q.copy()
    values = np.unique(values.astype(np.float32).astype(np.float64))
    forced = [-1.0, 0.0, 1.0] if signed else [0.0, 1.0]
    for point in forced:
        if np.any(values == point):
            continue
        if values.size < MAX_CODES:
            values = np.sort(np.append(values, point))
        else:
            # never displace a point forced earlier
            dist = np.abs(values - point)
            dist[np.isin(values, forced)] = np.inf
            values[np.argmin(dist)] = point
            values = np.sort(values)

    if codebook_id is None:
        digest = hashlib.sha1(values.astype("<f4").tobytes()).hexdigest()[:10]
        codebook_id = f"quantile-{digest}"
    return Codebook(values, signed, CodebookKind.QUANTILE, codebook_id)


def normal_quantile_codebook(k: int = 8) -> Codebook:
    """Quantile codebook of the standard normal using the exact inverse CDF.

    The lowest midpoint involves Q(0) = -inf and is dropped, leaving 2**k - 1
    finite midpoints that are symmetric about an exact 0.
    """
    n = 2**k
    p = np.arange(n + 1, dtype=np.float64) / (n + 1)
    qx = ndtri(p)
    mids = (qx[:-1] + qx[1:]) / 2.0
    mids = mids[np.isfinite(mids)]
    # the middle midpoint straddles p = 1/2 symmetrically and cancels up to rounding
    mids[np.abs(mids) < 1e-12] = 0.0
    cid = "quantile-normal" if k == 8 else f"quantile-normal-{k}"
    return build_quantile(mids, signed=True, codebook_id=cid)


BUILTIN_IDS = (
    "linear-signed-8",
    "linear-unsigned-8",
    "dynamic-signed",
    "dynamic-unsigned",
    "inverse-dynamic",
    "quantile-normal",
)


@lru_cache(maxsize=None)
def get_codebook(codebook_id: str) -> Codebook:
    """Resolve a built-in codebook by id (linear ids accept any bit width 2..8)."""
    if codebook_id == "dynamic-signed":
        return build_dynamic_tree_signed()
    if codebook_id == "dynamic-unsigned":
        return build_dynamic_unsigned()
    if codebook_id == "inverse-dynamic":
        return build_inverse_dynamic()
    if codebook_id == "quantile-normal":
        return normal_quantile_codebook(8)
    if codebook_id.startswith("linear-"):
        parts = codebook_id.split("-")
        if len(parts) == 3 and parts[1] in ("signed", "unsigned") and parts[2].isdigit():
            return build_linear(parts[1] == "signed", int(parts[2]))
    raise ValueError(f"unknown codebook id {codebook_id!r}")
