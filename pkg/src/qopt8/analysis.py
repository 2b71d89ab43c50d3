"""Adam quantization-error analysis: per-element errors, 256x256 usage/error grids,
and a desk-scale codebook comparison on synthetic optimizer states."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebooks import Codebook, build_quantile, get_codebook
from .quant import dequantize_blockwise, quantize_blockwise
from .quantile_est import StreamingQuantileEstimator

GRID = 256
SENTINEL = -1.0
REL_FLOOR = 1e-12

COMPARISON_KINDS = ("linear", "quantile", "inverse-dynamic", "dynamic")


def _fmt(x) -> str:
    return f"{float(x):.9g}"


def adam_update(m, r, eps: float) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return m / (np.sqrt(r) + eps)


def _round_trip(x, cb: Codebook, block_size):
    q = quantize_blockwise(x, cb, block_size)
    return q.codes, dequantize_blockwise(q, cb)


def _errors(m32, r32, eps, m_cb, r_cb, block_size):
    m32 = np.asarray(m32, dtype=np.float32).ravel()
    r32 = np.asarray(r32, dtype=np.float32).ravel()
    if m32.shape != r32.shape:
        raise ValueError("first and second state must have the same number of elements")
    if np.any(r32 < 0):
        raise ValueError("second Adam state must be nonnegative")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    m_codes, m8 = _round_trip(m32, m_cb, block_size)
    r_codes, r8 = _round_trip(r32, r_cb, block_size)
    u32 = adam_update(m32, r32, eps)
    u8 = adam_update(m8, r8, eps)
    abs_err = np.abs(u32 - u8)
    peak = np.abs(u32).max()
    # updates near zero would blow up the ratio; floor the denominator relative to the largest update
    floor = REL_FLOOR * peak if peak > 0 else np.finfo(np.float64).tiny
    rel_err = abs_err / np.maximum(np.abs(u32), floor)
    return abs_err, rel_err, m_codes, r_codes, m8


def adam_update_error(m32, r32, eps: float, m_codebook: Codebook, r_codebook: Codebook, block_size=None):
    """Elementwise absolute and relative deviation of the 8-bit Adam update.

    Both states take one quantize/dequantize round trip (``block_size=None``
    for tensor-wide normalization) before forming m / (sqrt(r) + eps).
    """
    abs_err, rel_err, *_ = _errors(m32, r32, eps, m_codebook, r_codebook, block_size)
    return abs_err, rel_err


@dataclass
class ErrorGrid:
    usage: np.ndarray = field(default_factory=lambda: np.zeros((GRID, GRID), dtype=np.int64))
    abs_err: np.ndarray = field(default_factory=lambda: np.full((GRID, GRID), SENTINEL, dtype=np.float32))
    rel_err: np.ndarray = field(default_factory=lambda: np.full((GRID, GRID), SENTINEL, dtype=np.float32))

    @property
    def total(self) -> int:
        return int(self.usage.sum())

    def merge(self, other: "ErrorGrid") -> "ErrorGrid":
        """Combine two partial grids: usage adds, error planes are usage-weighted means."""
        usage = self.usage + other.usage
        out = ErrorGrid(usage)
        used = usage > 0
        for name in ("abs_err", "rel_err"):
            a = np.where(self.usage > 0, getattr(self, name), 0.0).astype(np.float64)
            b = np.where(other.usage > 0, getattr(other, name), 0.0).astype(np.float64)
            acc = a * self.usage + b * other.usage
            plane = np.full((GRID, GRID), SENTINEL, dtype=np.float32)
            plane[used] = (acc[used] / usage[used]).astype(np.float32)
            setattr(out, name, plane)
        return out

    def __eq__(self, other):
        if not isinstance(other, ErrorGrid):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("usage", "abs_err", "rel_err"))


def build_error_grid(m32, r32, eps: float, codebooks: tuple[Codebook, Codebook], block_size=None) -> ErrorGrid:
    """Attribute every element to its (m-code, r-code) cell and average its errors there."""
    m_cb, r_cb = codebooks
    abs_err, rel_err, m_codes, r_codes, _ = _errors(m32, r32, eps, m_cb, r_cb, block_size)
    cell = m_codes.astype(np.int64) * GRID + r_codes.astype(np.int64)
    usage = np.bincount(cell, minlength=GRID * GRID)
    grid = ErrorGrid(usage.reshape(GRID, GRID))
    used = usage > 0
    for name, err in (("abs_err", abs_err), ("rel_err", rel_err)):
        sums = np.bincount(cell, weights=err, minlength=GRID * GRID)
        plane = np.full(GRID * GRID, SENTINEL, dtype=np.float32)
        plane[used] = (sums[used] / usage[used]).astype(np.float32)
        setattr(grid, name, plane.reshape(GRID, GRID))
    return grid


def overlap_metric(grid: ErrorGrid) -> float:
    """Usage-weighted mean of per-cell relative error: high when busy cells are also bad cells."""
    used = grid.usage > 0
    if not used.any():
        return 0.0
    w = grid.usage[used].astype(np.float64)
    return float(np.sum(w * grid.rel_err[used]) / w.sum())


# --- synthetic optimizer states -------------------------------------------------


def synthetic_states(
    n: int,
    rng: np.random.Generator,
    decade_sd: float = 0.25,
    history: int = 16,
    beta1: float = 0.9,
    beta2: float = 0.999,
    grad_scale: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """First/second Adam states from a short simulated gradient history.

    Each element has its own gradient scale, log-normally spread with
    ``decade_sd`` decades of standard deviation, so the second state spans a
    few orders of magnitude across the tensor. States are EMAs from zero.
    """
    scale = grad_scale * 10.0 ** (decade_sd * rng.standard_normal(n))
    m = np.zeros(n)
    r = np.zeros(n)
    for _ in range(history):
        g = scale * rng.standard_normal(n)
        m = beta1 * m + (1.0 - beta1) * g
        r = beta2 * r + (1.0 - beta2) * g * g
    return m.astype(np.float32), r.astype(np.float32)


def normal_states(n: int, rng: np.random.Generator, scale: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    m = (scale * rng.standard_normal(n)).astype(np.float32)
    return m, m * m


STATE_SOURCES = {"synthetic": synthetic_states, "normal": normal_states}


def _fit_quantile_codebook(sample: np.ndarray, signed: bool) -> Codebook:
    est = StreamingQuantileEstimator()
    x = sample.astype(np.float64)
    est.observe(x / np.abs(x).max())
    return build_quantile(est.finalize(), signed=signed)


def codebook_pair(kind: str, heldout: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Codebook, Codebook]:
    """(first-state, second-state) codebooks for a comparison row.

    The quantile pair is fit on a held-out sample; the others are fixed types.
    Inverse dynamic has no unsigned layout, so it serves both states.
    """
    if kind == "linear":
        return get_codebook("linear-signed-8"), get_codebook("linear-unsigned-8")
    if kind == "dynamic":
        return get_codebook("dynamic-signed"), get_codebook("dynamic-unsigned")
    if kind == "inverse-dynamic":
        cb = get_codebook("inverse-dynamic")
        return cb, cb
    if kind == "quantile":
        if heldout is None:
            raise ValueError("quantile codebooks need a held-out sample to fit on")
        return _fit_quantile_codebook(heldout[0], True), _fit_quantile_codebook(heldout[1], False)
    raise ValueError(f"unknown comparison kind {kind!r}")


@dataclass
class SummaryRow:
    codebook: str
    rel_adam_err: float
    rel_adam_se: float
    abs_quant_err: float
    abs_quant_se: float


@dataclass
class ErrorSummary:
    rows: list[SummaryRow]

    def by_kind(self) -> dict[str, SummaryRow]:
        return {r.codebook: r for r in self.rows}


def _mean_se(x: list[float]) -> tuple[float, float]:
    a = np.asarray(x, dtype=np.float64)
    se = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def compare_codebooks(
    state_source: str = "synthetic",
    n: int = 1_000_000,
    seed: int = 0,
    resamples: int = 5,
    kinds=COMPARISON_KINDS,
    eps: float = 1e-8,
    block_size: int | None = None,
    source_kwargs: dict | None = None,
) -> ErrorSummary:
    """Mean relative Adam error and mean absolute first-state quantization error per codebook.

    Each resample draws fresh states (and a fresh held-out sample for the
    quantile fit); reported values are the mean and standard error over resamples.
    """
    if n < 100_000:
        raise ValueError("compare_codebooks needs n >= 1e5")
    if resamples < 2:
        raise ValueError("need at least 2 resamples for a standard error")
    make = STATE_SOURCES[state_source]
    kw = source_kwargs or {}
    rel = {k: [] for k in kinds}
    absq = {k: [] for k in kinds}
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(resamples)):
        rng_eval, rng_fit = (np.random.default_rng(s) for s in child.spawn(2))
        m, r = make(n, rng_eval, **kw)
        heldout = make(n, rng_fit, **kw) if "quantile" in kinds else None
        for kind in kinds:
            m_cb, r_cb = codebook_pair(kind, heldout)
            _, rel_err, _, _, m8 = _errors(m, r, eps, m_cb, r_cb, block_size)
            rel[kind].append(float(rel_err.mean()))
            absq[kind].append(float(np.mean(np.abs(m.astype(np.float64) - m8))))
    rows = []
    for kind in kinds:
        rm, rs = _mean_se(rel[kind])
        am, asd = _mean_se(absq[kind])
        rows.append(SummaryRow(kind, rm, rs, am, asd))
    return ErrorSummary(rows)


# --- CSV ------------------------------------------------------------------------

GRID_HEADER = ["m_code", "r_code", "usage", "abs_err", "rel_err"]
SUMMARY_HEADER = ["codebook", "rel_adam_err", "rel_adam_se", "abs_quant_err", "abs_quant_se"]


def emit_grid_csv(grid: ErrorGrid, path, dense: bool = False) -> None:
    """Write grid cells in row-major order. Only used cells unless ``dense``;
    dense output marks unused cells with usage 0 and error -1."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRID_HEADER)
        cells = np.argwhere(np.ones_like(grid.usage, dtype=bool) if dense else grid.usage > 0)
        for i, j in cells:
            w.writerow([i, j, int(grid.usage[i, j]), _fmt(grid.abs_err[i, j]), _fmt(grid.rel_err[i, j])])


def read_grid_csv(path) -> ErrorGrid:
    grid = ErrorGrid()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        if next(reader) != GRID_HEADER:
            raise ValueError(f"{path}: not a grid CSV")
        for row in reader:
            i, j = int(row[0]), int(row[1])
            grid.usage[i, j] = int(row[2])
            grid.abs_err[i, j] = np.float32(row[3])
            grid.rel_err[i, j] = np.float32(row[4])
    return grid


def emit_summary_csv(summary: ErrorSummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in summary.rows:
            w.writerow([r.codebook, _fmt(r.rel_adam_err), _fmt(r.rel_adam_se), _fmt(r.abs_quant_err), _fmt(r.abs_quant_se)])


def read_summary_csv(path) -> ErrorSummary:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        if next(reader) != SUMMARY_HEADER:
            raise ValueError(f"{path}: not a summary CSV")
        return ErrorSummary([SummaryRow(r[0], *map(float, r[1:])) for r in reader])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
