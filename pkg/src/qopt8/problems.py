"""Seedable toy objectives with hand-written gradients, and a training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codebooks import get_codebook
from .optim import Optimizer, OptimizerConfig, OptimizerKind
from .quant import DEFAULT_BLOCK_SIZE


class Rosenbrock:
    name = "rosenbrock"

    def __init__(self, seed: int, a: float = 1.0, b: float = 100.0):
        rng = np.random.default_rng(seed)
        self.a, self.b = a, b
        self.start = (np.array([-1.2, 1.0]) + rng.uniform(-0.3, 0.3, 2)).astype(np.float32)

    def init_params(self):
        return {"xy": self.start.copy()}

    def loss_and_grad(self, params, step=0):
        x, y = (float(v) for v in params["xy"])
        a, b = self.a, self.b
        loss = (a - x) ** 2 + b * (y - x * x) ** 2
        gx = -2.0 * (a - x) - 4.0 * b * x * (y - x * x)
        gy = 2.0 * b * (y - x * x)
        return loss, {"xy": np.array([gx, gy], dtype=np.float32)}


class Quadratic:
    """Ill-conditioned separable quadratic, curvatures log-spaced over [1, 100]."""

    name = "quadratic"

    def __init__(self, seed: int, dim: int = 100):
        rng = np.random.default_rng(seed)
        self.curv = np.logspace(0, 2, dim)
        self.center = rng.standard_normal(dim)
        self.start = np.zeros(dim, dtype=np.float32)

    def init_params(self):
        return {"x": self.start.copy()}

    def loss_and_grad(self, params, step=0):
        d = params["x"].astype(np.float64) - self.center
        return 0.5 * float(np.sum(self.curv * d * d)), {"x": (self.curv * d).astype(np.float32)}


class LogisticRegression:
    """Synthetic binary logistic regression with labels drawn from a planted model."""

    name = "logreg"

    def __init__(self, seed: int, dim: int = 50, n: int = 2000):
        rng = np.random.default_rng(seed)
        self.X = rng.standard_normal((n, dim))
        w_true = rng.standard_normal(dim) * (2.0 / math.sqrt(dim))
        p = 1.0 / (1.0 + np.exp(-(self.X @ w_true)))
        self.y = (rng.random(n) < p).astype(np.float64)
        self.dim = dim

    def init_params(self):
        return {"w": np.zeros(self.dim, dtype=np.float32), "b": np.zeros(1, dtype=np.float32)}

    def loss_and_grad(self, params, step=0):
        z = self.X @ params["w"].astype(np.float64) + float(params["b"][0])
        # log(1 + e^z) - y z, computed stably
        loss = float(np.mean(np.logaddexp(0.0, z) - self.y * z))
        err = (0.5 * (1.0 + np.tanh(0.5 * z)) - self.y) / len(self.y)
        return loss, {"w": (self.X.T @ err).astype(np.float32), "b": np.array([err.sum()], dtype=np.float32)}


class MLP:
    """Two-layer tanh regression network fit to a noisy random teacher.

    With ``spike_prob > 0`` some steps multiply a random ``spike_frac`` of
    every gradient's elements by ``spike_scale``, injecting outliers.
    """

    name = "mlp"

    def __init__(
        self,
        seed: int,
        n: int = 2048,
        d_in: int = 8,
        hidden: int = 32,
        noise: float = 0.1,
        spike_prob: float = 0.0,
        spike_scale: float = 50.0,
        spike_frac: float = 0.01,
    ):
        rng = np.random.default_rng(seed)
        self.X = rng.standard_normal((n, d_in))
        tw1 = rng.standard_normal((d_in, 16)) / math.sqrt(d_in)
        tw2 = rng.standard_normal(16) / math.sqrt(16) * 2.0
        self.y = np.tanh(self.X @ tw1) @ tw2 + noise * rng.standard_normal(n)
        self.d_in, self.hidden = d_in, hidden
        self.spike_prob, self.spike_scale, self.spike_frac = spike_prob, spike_scale, spike_frac
        self._init_rng_seed = seed + 1
        self._spike_rng = np.random.default_rng(seed + 2)

    def init_params(self):
        rng = np.random.default_rng(self._init_rng_seed)
        return {
            "w1": (rng.standard_normal((self.d_in, self.hidden)) / math.sqrt(self.d_in)).astype(np.float32),
            "b1": np.zeros(self.hidden, dtype=np.float32),
            "w2": (rng.standard_normal(self.hidden) / math.sqrt(self.hidden)).astype(np.float32),
            "b2": np.zeros(1, dtype=np.float32),
        }

    def loss_and_grad(self, params, step=0):
        n = len(self.y)
        h = np.tanh(self.X @ params["w1"].astype(np.float64) + params["b1"])
        resid = h @ params["w2"].astype(np.float64) + float(params["b2"][0]) - self.y
        loss = float(np.mean(resid**2))
        dout = 2.0 * resid / n
        dh = np.outer(dout, params["w2"]) * (1.0 - h * h)
        grads = {
            "w1": self.X.T @ dh,
            "b1": dh.sum(axis=0),
            "w2": h.T @ dout,
            "b2": np.array([dout.sum()]),
        }
        if self.spike_prob > 0 and self._spike_rng.random() < self.spike_prob:
            for name, gr in grads.items():
                mask = self._spike_rng.random(gr.shape) < self.spike_frac
                grads[name] = np.where(mask, gr * self.spike_scale, gr)
        return loss, {k: v.astype(np.float32) for k, v in grads.items()}


PROBLEMS = {"rosenbrock": Rosenbrock, "quadratic": Quadratic, "logreg": LogisticRegression, "mlp": MLP}
OPTIMIZERS = ("adam32", "adam8", "momentum32", "momentum8", "adagrad32", "adagrad8")

# learning rates per (problem, optimizer kind)
DEFAULT_LR = {
    ("rosenbrock", "adam"): 1e-3,
    ("rosenbrock", "momentum"): 1e-4,
    ("rosenbrock", "adagrad"): 5e-2,
    ("quadratic", "adam"): 1e-2,
    ("quadratic", "momentum"): 1e-3,
    ("quadratic", "adagrad"): 1e-1,
    ("logreg", "adam"): 1e-2,
    ("logreg", "momentum"): 5e-2,
    ("logreg", "adagrad"): 1e-1,
    ("mlp", "adam"): 1e-3,
    ("mlp", "momentum"): 1e-2,
    ("mlp", "adagrad"): 2e-2,
}


def parse_optimizer(name: str) -> tuple[OptimizerKind, int]:
    if name not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}; choose from {', '.join(OPTIMIZERS)}")
    return OptimizerKind(name[:-1] if name.endswith("8") else name[:-2]), int(name[-1] if name.endswith("8") else 32)


@dataclass
class TrainResult:
    losses: list[float]
    final_loss: float
    diverged: bool


def make_problem(problem: str, seed: int, **kwargs):
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")
    return PROBLEMS[problem](seed, **kwargs)


def train(
    problem: str,
    optimizer: str,
    steps: int,
    seed: int = 0,
    lr: float | None = None,
    block_size: int | None = DEFAULT_BLOCK_SIZE,
    codebooks: str = "dynamic",
    problem_kwargs: dict | None = None,
    threads: int | None = None,
) -> TrainResult:
    """Run ``steps`` full-batch updates and return the loss trajectory.

    ``codebooks="linear"`` swaps the 8-bit state data types for linear grids,
    and ``block_size=None`` normalizes each state tensor-wide; both exist for
    ablations. A non-finite loss or state stops training and marks divergence.
    """
    kind, bits = parse_optimizer(optimizer)
    prob = make_problem(problem, seed, **(problem_kwargs or {}))
    cfg = OptimizerConfig(lr=lr if lr is not None else DEFAULT_LR[(problem, kind.value)], kind=kind)
    if codebooks == "dynamic":
        m_cb, r_cb = get_codebook("dynamic-signed"), get_codebook("dynamic-unsigned")
    elif codebooks == "linear":
        m_cb, r_cb = get_codebook("linear-signed-8"), get_codebook("linear-unsigned-8")
    else:
        raise ValueError(f"codebooks must be 'dynamic' or 'linear', got {codebooks!r}")
    opt = Optimizer(cfg, bits, block_size, m_cb, r_cb, threads=threads)
    params = prob.init_params()
    losses = []
    # divergence is detected explicitly below, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            loss, grads = prob.loss_and_grad(params, t)
            losses.append(loss)
            if not math.isfinite(loss):
                return TrainResult(losses, math.nan, True)
            try:
                opt.step(params, grads)
            except FloatingPointError:
                losses.append(math.nan)
                return TrainResult(losses, math.nan, True)
        final, _ = prob.loss_and_grad(params, steps)
    diverged = not math.isfinite(final)
    return TrainResult(losses, math.nan if diverged else final, diverged)
