"""Command-line entry point: ``qopt8 <subcommand> [flags]``.

Raw tensor inputs are headerless little-endian float32 files. Experiment
outputs are CSV (9 significant digits) plus a ``manifest.txt`` recording the
full configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, bqt
from .codebooks import BUILTIN_IDS, get_codebook
from .embedding import embedding_grad_stats
from .optim import Optimizer, OptimizerConfig, OptimizerKind, memory_footprint
from .problems import OPTIMIZERS, PROBLEMS, parse_optimizer, train
from .quant import DEFAULT_BLOCK_SIZE, dequantize_blockwise, quantize_blockwise
from .quantile_est import DEFAULT_CHUNK, DEFAULT_K, StreamingQuantileEstimator, exact_quantiles


def _fmt(x) -> str:
    return f"{float(x):.9g}"


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _write_manifest(out: Path, args: argparse.Namespace) -> None:
    lines = [f"qopt8_version={__version__}", f"command={args.command}"]
    for k, v in sorted(vars(args).items()):
        if k not in ("command", "func"):
            lines.append(f"{k}={v}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _block_size(args) -> int | None:
    return None if args.tensorwise else args.block_size


# --- subcommands -----------------------------------------------------------------


def cmd_codebook(args) -> int:
    cb = get_codebook(args.kind)
    buf = io.StringIO()
    if args.format == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(cb.values):
            w.writerow([i, _fmt(v)])
    else:
        for i, v in enumerate(cb.values):
            buf.write(f"{i:3d} {_fmt(v)}\n")
    sys.stdout.write(buf.getvalue())
    return 0


def _read_raw_f32(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise ValueError(f"{path}: size {len(data)} is not a multiple of 4 bytes")
    return np.frombuffer(data, dtype="<f4").astype(np.float32)


def cmd_quantize(args) -> int:
    x = _read_raw_f32(args.input)
    q = quantize_blockwise(x, get_codebook(args.codebook), _block_size(args), args.threads)
    bqt.save(q, args.output)
    return 0


def cmd_dequantize(args) -> int:
    q = bqt.load(args.input)
    x = dequantize_blockwise(q, get_codebook(q.codebook_id))
    Path(args.output).write_bytes(x.astype("<f4").tobytes())
    return 0


def cmd_analyze_error(args) -> int:
    kinds = analysis.COMPARISON_KINDS if args.codebook == "all" else (args.codebook,)
    bs = _block_size(args)
    src_kw = {}
    if args.source == "synthetic":
        src_kw = {"decade_sd": args.decade_sd, "history": args.history, "grad_scale": args.grad_scale}
    summary = analysis.compare_codebooks(
        args.source, args.n, args.seed, args.resamples, kinds, args.eps, bs, src_kw
    )
    out = analysis.ensure_dir(args.out)
    analysis.emit_summary_csv(summary, out / "summary.csv")
    # grids come from one extra draw so they do not depend on the resample count
    eval_seq, fit_seq = np.random.SeedSequence([args.seed, 1]).spawn(2)
    make = analysis.STATE_SOURCES[args.source]
    m, r = make(args.n, np.random.default_rng(eval_seq), **src_kw)
    heldout = make(args.n, np.random.default_rng(fit_seq), **src_kw) if "quantile" in kinds else None
    for kind in kinds:
        grid = analysis.build_error_grid(m, r, args.eps, analysis.codebook_pair(kind, heldout), bs)
        analysis.emit_grid_csv(grid, out / f"grid_{kind}.csv", dense=args.dense)
    _write_manifest(out, args)
    for row in summary.rows:
        print(f"{row.codebook}: rel_adam_err={_fmt(row.rel_adam_err)} +- {_fmt(row.rel_adam_se)}")
    return 0


def cmd_train_toy(args) -> int:
    res = train(args.problem, args.optimizer, args.steps, args.seed, args.lr, _block_size(args), args.codebooks,
                threads=args.threads)
    rows = [(t, loss) for t, loss in enumerate(res.losses)]
    summary = f"final_loss={_fmt(res.final_loss)} diverged={int(res.diverged)}"
    if args.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows((t, _fmt(v)) for t, v in rows)
        print(f"# {summary}")
        return 0
    out = analysis.ensure_dir(args.out)
    with open(out / "losses.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows((t, _fmt(v)) for t, v in rows)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["problem", "optimizer", "seed", "steps", "final_loss", "diverged"])
        w.writerow([args.problem, args.optimizer, args.seed, args.steps, _fmt(res.final_loss), int(res.diverged)])
    _write_manifest(out, args)
    print(summary)
    return 0


_DISTS = {
    "normal": lambda rng, n: rng.standard_normal(n),
    "uniform": lambda rng, n: rng.uniform(-1.0, 1.0, n),
    "lognormal": lambda rng, n: rng.lognormal(0.0, 1.0, n),
}


def cmd_quantile_bench(args) -> int:
    x = _DISTS[args.dist](np.random.default_rng(args.seed), args.n)
    times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        est = StreamingQuantileEstimator(args.chunk, args.k).observe(x)
        q = est.finalize()
        times.append(time.perf_counter() - t0)
    dev = np.abs(q - exact_quantiles(x, args.k))
    print(f"max_deviation={_fmt(dev.max())}")
    print(f"max_deviation_central={_fmt(dev[1:-1].max())}")
    print(f"mean_deviation={_fmt(dev.mean())}")
    print(f"discarded={est.discarded}")
    print(f"ns_per_element={_fmt(statistics.median(times) / args.n * 1e9)}")
    return 0


def cmd_bench_optim(args) -> int:
    kind, bits = parse_optimizer(args.optimizer)
    rng = np.random.default_rng(args.seed)
    params = {"w": rng.standard_normal(args.params).astype(np.float32)}
    grads = {"w": (1e-3 * rng.standard_normal(args.params)).astype(np.float32)}
    opt = Optimizer(OptimizerConfig(lr=1e-3, kind=kind), bits, args.block_size, threads=args.threads)
    opt.step(params, grads)  # warm-up allocates state
    times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        opt.step(params, grads)
        times.append(time.perf_counter() - t0)
    ms = statistics.median(times) * 1e3 * (1e9 / args.params)
    print(f"optimizer={args.optimizer} params={args.params} reps={args.reps}")
    print(f"ms_per_update_per_1B_params={_fmt(ms)}")
    return 0


def cmd_memory_report(args) -> int:
    kind = args.optimizer
    nbytes = memory_footprint(args.params, kind, args.bits, None if args.tensorwise else args.block_size)
    print(f"{nbytes / 1e9:.3f} GB")
    return 0


def cmd_embedding_stats(args) -> int:
    stats = embedding_grad_stats(args.vocab, args.dim, args.zipf_s, args.batch_sizes, args.seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["batch_size", "max_median_ratio", "arrangement_max_rel_change", "arrangement_mean_rel_change",
                "dense_rel_change"])
    for s in stats:
        w.writerow([s.batch_size, _fmt(s.max_median_ratio), _fmt(s.arrangement_max_rel_change),
                    _fmt(s.arrangement_mean_rel_change), _fmt(s.dense_rel_change)])
    return 0


# --- parser ----------------------------------------------------------------------


def _add_blocking(p: argparse.ArgumentParser, default_tensorwise: bool = False) -> None:
    p.add_argument("--block-size", type=_positive_int, default=DEFAULT_BLOCK_SIZE,
                   help="elements per quantization block (default: %(default)s)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--blockwise", dest="tensorwise", action="store_false", help="block-wise normalization")
    g.add_argument("--tensorwise", dest="tensorwise", action="store_true", help="one absmax for the whole tensor")
    p.set_defaults(tensorwise=default_tensorwise)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads for block encoding (default: $QOPT8_THREADS or 1)")

    parser = argparse.ArgumentParser(prog="qopt8", description="8-bit optimizer-state quantization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", parents=[common], help="inspect codebooks")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--kind", required=True, choices=BUILTIN_IDS)
    p.add_argument("--format", choices=["csv", "text"], default="csv", help="(default: %(default)s)")
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("quantize", parents=[common], help="raw float32 file -> BQT file")
    p.add_argument("--in", dest="input", required=True, help="headerless little-endian float32 file")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--codebook", choices=BUILTIN_IDS, default="dynamic-signed", help="(default: %(default)s)")
    _add_blocking(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", parents=[common], help="BQT file -> raw float32 file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("analyze-error", parents=[common], help="Adam update error per codebook")
    p.add_argument("--codebook", choices=("all",) + analysis.COMPARISON_KINDS, default="all",
                   help="(default: %(default)s)")
    _add_blocking(p, default_tensorwise=True)
    p.add_argument("--n", type=_positive_int, default=1_000_000, help="state elements (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resamples", type=_positive_int, default=5, help="(default: %(default)s)")
    p.add_argument("--source", choices=sorted(analysis.STATE_SOURCES), default="synthetic",
                   help="state generator (default: %(default)s)")
    p.add_argument("--decade-sd", type=float, default=0.25, help="synthetic: spread of gradient scales in decades")
    p.add_argument("--history", type=_positive_int, default=16, help="synthetic: simulated steps")
    p.add_argument("--grad-scale", type=float, default=1e-3, help="synthetic: median gradient scale")
    p.add_argument("--eps", type=float, default=1e-8, help="(default: %(default)s)")
    p.add_argument("--dense", action="store_true", help="write all 65536 grid cells, not just used ones")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze_error)

    p = sub.add_parser("train-toy", parents=[common], help="train a toy problem, emit per-step loss CSV")
    p.add_argument("--problem", choices=sorted(PROBLEMS), required=True)
    p.add_argument("--optimizer", choices=OPTIMIZERS, required=True)
    p.add_argument("--steps", type=_positive_int, default=1000, help="(default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None, help="(default: per-problem preset)")
    p.add_argument("--codebooks", choices=["dynamic", "linear"], default="dynamic", help="(default: %(default)s)")
    _add_blocking(p)
    p.add_argument("--out", default=None, help="output directory (default: CSV to stdout)")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("quantile-bench", parents=[common], help="streaming quantile accuracy and speed")
    p.add_argument("--n", type=_positive_int, default=1_000_000, help="(default: %(default)s)")
    p.add_argument("--dist", choices=sorted(_DISTS), default="normal", help="(default: %(default)s)")
    p.add_argument("--chunk", type=_positive_int, default=DEFAULT_CHUNK, help="(default: %(default)s)")
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K, help="(default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=_positive_int, default=5, help="timing repetitions (default: %(default)s)")
    p.set_defaults(func=cmd_quantile_bench)

    p = sub.add_parser("bench-optim", parents=[common], help="optimizer update time")
    p.add_argument("--params", type=_positive_int, default=1_000_000, help="(default: %(default)s)")
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adam8", help="(default: %(default)s)")
    p.add_argument("--block-size", type=_positive_int, default=DEFAULT_BLOCK_SIZE, help="(default: %(default)s)")
    p.add_argument("--reps", type=_positive_int, default=5, help="timing repetitions (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_optim)

    p = sub.add_parser("memory-report", parents=[common], help="optimizer-state memory in GB (1e9 bytes)")
    p.add_argument("--params", type=_positive_int, required=True)
    p.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], default="adam")
    p.add_argument("--bits", type=int, choices=[8, 32], default=32)
    _add_blocking(p)
    p.set_defaults(func=cmd_memory_report)

    p = sub.add_parser("embedding-stats", parents=[common], help="Zipfian per-token embedding gradient stats")
    p.add_argument("--vocab", type=_positive_int, default=10_000)
    p.add_argument("--dim", type=_positive_int, default=64)
    p.add_argument("--zipf-s", type=float, default=1.2)
    p.add_argument("--batch-sizes", type=_positive_int, nargs="+", default=[8, 32])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embedding_stats)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"qopt8 {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
