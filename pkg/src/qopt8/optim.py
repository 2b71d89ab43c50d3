"""Reference 32-bit optimizers and their 8-bit-state counterparts.

The 8-bit step dequantizes the block-quantized states, runs the exact same
32-bit update, and requantizes the new states with fresh per-block absmax.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .codebooks import Codebook, get_codebook
from .quant import DEFAULT_BLOCK_SIZE, BlockQuantizedTensor, dequantize_blockwise, quantize_blockwise


class OptimizerKind(str, enum.Enum):
    MOMENTUM = "momentum"
    ADAM = "adam"
    ADAGRAD = "adagrad"


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_correction: bool = False
    kind: OptimizerKind = OptimizerKind.ADAM

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass
class State32:
    m: np.ndarray | None
    r: np.ndarray | None
    step: int = 0

    @classmethod
    def zeros(cls, shape, kind: OptimizerKind) -> "State32":
        kind = OptimizerKind(kind)
        m = np.zeros(shape, np.float32) if kind is not OptimizerKind.ADAGRAD else None
        r = np.zeros(shape, np.float32) if kind is not OptimizerKind.MOMENTUM else None
        return cls(m, r, 0)


@dataclass
class QuantizedOptimizerState:
    m_q: BlockQuantizedTensor | None
    r_q: BlockQuantizedTensor | None
    step: int = 0


def _grad32(w, g, *states) -> np.ndarray:
    g = np.asarray(g, dtype=np.float32)
    if np.shape(w) != g.shape:
        raise ValueError(f"shape mismatch: weights {np.shape(w)} vs gradient {g.shape}")
    for s in states:
        if s is not None and s.shape != g.shape:
            raise ValueError(f"shape mismatch: state {s.shape} vs gradient {g.shape}")
    return g


def momentum_step_32(w, g, state: State32, cfg: OptimizerConfig):
    g = _grad32(w, g, state.m)
    if state.step < 0:
        raise ValueError("step must be >= 0")
    if state.step == 0:
        m = g.copy()
    else:
        m = cfg.beta1 * state.m + g
    w = w - cfg.lr * m
    return w, State32(m, None, state.step + 1)


def adam_step_32(w, g, state: State32, cfg: OptimizerConfig):
    g = _grad32(w, g, state.m, state.r)
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    r = cfg.beta2 * state.r + (1.0 - cfg.beta2) * (g * g)
    t = state.step + 1
    m_hat, r_hat = m, r
    if cfg.bias_correction:
        m_hat = m / (1.0 - cfg.beta1**t)
        r_hat = r / (1.0 - cfg.beta2**t)
    w = w - cfg.lr * m_hat / (np.sqrt(r_hat) + cfg.eps)
    return w, State32(m, r, t)


def adagrad_step_32(w, g, state: State32, cfg: OptimizerConfig):
    g = _grad32(w, g, state.r)
    r = state.r + g * g
    w = w - cfg.lr * g / (np.sqrt(r) + cfg.eps)
    return w, State32(None, r, state.step + 1)


STEP_32 = {
    OptimizerKind.MOMENTUM: momentum_step_32,
    OptimizerKind.ADAM: adam_step_32,
    OptimizerKind.ADAGRAD: adagrad_step_32,
}


def step_32(w, g, state: State32, cfg: OptimizerConfig):
    return STEP_32[cfg.kind](w, g, state, cfg)


def default_codebooks() -> tuple[Codebook, Codebook]:
    return get_codebook("dynamic-signed"), get_codebook("dynamic-unsigned")


def init_8bit_state(
    shape,
    kind: OptimizerKind,
    block_size: int | None = DEFAULT_BLOCK_SIZE,
    m_codebook: Codebook | None = None,
    r_codebook: Codebook | None = None,
) -> QuantizedOptimizerState:
    s = State32.zeros(shape, kind)
    dm, dr = default_codebooks()
    m_cb, r_cb = m_codebook or dm, r_codebook or dr
    m_q = quantize_blockwise(s.m, m_cb, block_size) if s.m is not None else None
    r_q = quantize_blockwise(s.r, r_cb, block_size) if s.r is not None else None
    return QuantizedOptimizerState(m_q, r_q, 0)


def _dequant(q: BlockQuantizedTensor | None, cb: Codebook, shape) -> np.ndarray | None:
    if q is None:
        return None
    x = dequantize_blockwise(q, cb).reshape(shape)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("dequantized optimizer state is not finite")
    return x


def _requant(x: np.ndarray | None, cb: Codebook, block_size, threads) -> BlockQuantizedTensor | None:
    if x is None:
        return None
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("optimizer state diverged (NaN or Inf after update)")
    return quantize_blockwise(x, cb, block_size, threads)


def step_8bit(
    w,
    g,
    qstate: QuantizedOptimizerState,
    cfg: OptimizerConfig,
    block_size: int | None = DEFAULT_BLOCK_SIZE,
    m_codebook: Codebook | None = None,
    r_codebook: Codebook | None = None,
    threads: int | None = None,
):
    """One optimizer step with 8-bit block-quantized states.

    The weight update uses the full-precision post-update states; only then
    are the states requantized. ``block_size=None`` quantizes tensor-wide.
    """
    dm, dr = default_codebooks()
    m_cb, r_cb = m_codebook or dm, r_codebook or dr
    if not m_cb.signed and qstate.m_q is not None:
        raise ValueError("first-moment state needs a signed codebook")
    shape = np.shape(w)
    state = State32(_dequant(qstate.m_q, m_cb, shape), _dequant(qstate.r_q, r_cb, shape), qstate.step)
    w, new = step_32(w, g, state, cfg)
    qnew = QuantizedOptimizerState(
        _requant(new.m, m_cb, block_size, threads),
        _requant(new.r, r_cb, block_size, threads),
        new.step,
    )
    return w, qnew


class Optimizer:
    """Stateful optimizer over a dict of named numpy parameters.

    ``state_bits`` selects 32-bit or 8-bit states. Names listed in
    ``full_precision`` keep 32-bit states regardless (e.g. embedding tables).
    """

    def __init__(
        self,
        cfg: OptimizerConfig,
        state_bits: int = 32,
        block_size: int | None = DEFAULT_BLOCK_SIZE,
        m_codebook: Codebook | None = None,
        r_codebook: Codebook | None = None,
        full_precision=(),
        threads: int | None = None,
    ):
        if state_bits not in (8, 32):
            raise ValueError(f"state_bits must be 8 or 32, got {state_bits}")
        self.cfg = cfg
        self.state_bits = state_bits
        self.block_size = block_size
        self.m_codebook, self.r_codebook = m_codebook, r_codebook
        self.full_precision = set(full_precision)
        self.threads = threads
        self.state: dict[str, State32 | QuantizedOptimizerState] = {}

    def is_8bit(self, name: str) -> bool:
        return self.state_bits == 8 and name not in self.full_precision

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, w in params.items():
            g = grads[name]
            if self.is_8bit(name):
                st = self.state.get(name)
                if st is None:
                    st = init_8bit_state(np.shape(w), self.cfg.kind, self.block_size, self.m_codebook, self.r_codebook)
                params[name], self.state[name] = step_8bit(
                    w, g, st, self.cfg, self.block_size, self.m_codebook, self.r_codebook, self.threads
                )
            else:
                st = self.state.get(name) or State32.zeros(np.shape(w), self.cfg.kind)
                params[name], self.state[name] = step_32(w, g, st, self.cfg)

    def state_nbytes(self) -> int:
        total = 0
        for st in self.state.values():
            if isinstance(st, State32):
                total += sum(a.nbytes for a in (st.m, st.r) if a is not None)
            else:
                total += sum(q.nbytes() for q in (st.m_q, st.r_q) if q is not None)
        return total


_STATES_PER_KIND = {OptimizerKind.MOMENTUM: 1, OptimizerKind.ADAM: 2, OptimizerKind.ADAGRAD: 1}


def memory_footprint(param_count: int, kind, state_bits: int = 32, block_size: int | None = DEFAULT_BLOCK_SIZE) -> int:
    """Optimizer-state bytes for ``param_count`` parameters.

    8-bit states cost one byte per element plus one float32 absmax per block
    per state; ``block_size=None`` means no per-block overhead.
    """
    if param_count < 1:
        raise ValueError("param_count must be >= 1")
    n_states = _STATES_PER_KIND[OptimizerKind(kind)]
    if state_bits == 32:
        return 4 * n_states * param_count
    if state_bits != 8:
        raise ValueError(f"state_bits must be 8 or 32, got {state_bits}")
    overhead = 0 if block_size is None else 4 * math.ceil(param_count / block_size)
    return n_states * (param_count + overhead)
