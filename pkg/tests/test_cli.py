import numpy as np
import pytest

from qopt8.cli import build_parser, run


def _run(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_memory_report(capsys):
    assert _run(capsys, "memory-report", "--params", "1000000000", "--optimizer", "adam", "--bits", "32")[1] == "8.000 GB\n"
    assert _run(capsys, "memory-report", "--params", "1000000000", "--bits", "8")[1] == "2.004 GB\n"
    assert _run(capsys, "memory-report", "--params", "1000000000", "--bits", "8", "--tensorwise")[1] == "2.000 GB\n"


def test_codebook_dump_matches_golden(capsys, request):
    from pathlib import Path

    golden = Path(request.fspath).parent / "golden"
    for cid in ("dynamic-signed", "dynamic-unsigned", "inverse-dynamic", "linear-signed-8", "quantile-normal"):
        code, out, _ = _run(capsys, "codebook", "dump", "--kind", cid)
        assert code == 0
        assert out == (golden / f"{cid}.csv").read_text()


def test_codebook_dump_counts(capsys):
    out = _run(capsys, "codebook", "dump", "--kind", "dynamic-signed", "--format", "text")[1]
    assert len(out.splitlines()) == 255


def test_quantize_dequantize_zeros(tmp_path, capsys):
    src, q, back = tmp_path / "z.f32", tmp_path / "z.bqt", tmp_path / "z2.f32"
    np.zeros(5000, "<f4").tofile(src)
    assert _run(capsys, "quantize", "--in", str(src), "--out", str(q), "--block-size", "2048")[0] == 0
    assert _run(capsys, "dequantize", "--in", str(q), "--out", str(back))[0] == 0
    assert back.read_bytes() == src.read_bytes()


def test_quantize_round_trip_within_bound(tmp_path, capsys):
    x = np.random.default_rng(0).standard_normal(10_000).astype("<f4")
    src, q, back = tmp_path / "x.f32", tmp_path / "x.bqt", tmp_path / "y.f32"
    x.tofile(src)
    _run(capsys, "quantize", "--in", str(src), "--out", str(q), "--codebook", "linear-signed-8", "--tensorwise")
    _run(capsys, "dequantize", "--in", str(q), "--out", str(back))
    y = np.fromfile(back, "<f4")
    assert np.abs(y - x).max() <= 0.5 / 127 * np.abs(x).max() * (1 + 1e-6)


def test_io_errors_exit_1(tmp_path, capsys):
    code, _, err = _run(capsys, "quantize", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))
    assert code == 1 and "error" in err and err.count("\n") == 1
    (tmp_path / "bad.bqt").write_bytes(b"junk")
    assert _run(capsys, "dequantize", "--in", str(tmp_path / "bad.bqt"), "--out", str(tmp_path / "o"))[0] == 1
    (tmp_path / "odd.f32").write_bytes(b"abc")
    assert _run(capsys, "quantize", "--in", str(tmp_path / "odd.f32"), "--out", str(tmp_path / "o"))[0] == 1


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["memory-report"], ["memory-report", "--params", "10", "--bits", "16"],
     ["train-toy", "--problem", "resnet", "--optimizer", "adam8"], ["codebook", "dump", "--kind", "x"],
     ["quantile-bench", "--unknown-flag"], ["bench-optim", "--params", "0"]],
)
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv) == 2


def test_every_subcommand_has_help(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name in sub.choices:
        assert run([name, "--help"]) == 0
    out = capsys.readouterr()[0]
    assert "2048" in out and "4096" in out


def test_train_toy_stdout_and_determinism(capsys):
    argv = ["train-toy", "--problem", "rosenbrock", "--optimizer", "adam8", "--steps", "20", "--seed", "1"]
    code, out, _ = _run(capsys, *argv)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "step,loss" and len(lines) == 22 and lines[-1].startswith("# final_loss=")
    assert _run(capsys, *argv)[1] == out


def test_train_toy_out_dir(tmp_path, capsys):
    argv = ["train-toy", "--problem", "logreg", "--optimizer", "adagrad8", "--steps", "10", "--out"]
    _run(capsys, *argv, str(tmp_path / "a"))
    _run(capsys, *argv, str(tmp_path / "b"))
    for name in ("losses.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "optimizer=adagrad8" in manifest and "seed=0" in manifest


def test_analyze_error_outputs(tmp_path, capsys):
    argv = ["analyze-error", "--codebook", "all", "--n", "100000", "--resamples", "2", "--seed", "3", "--out"]
    assert _run(capsys, *argv, str(tmp_path / "a"))[0] == 0
    _run(capsys, *argv, str(tmp_path / "b"))
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["grid_dynamic.csv", "grid_inverse-dynamic.csv", "grid_linear.csv", "grid_quantile.csv",
                     "manifest.txt", "summary.csv"]
    for f in files:
        a, b = ((tmp_path / d / f).read_text().splitlines() for d in "ab")
        if f == "manifest.txt":
            # only the recorded output directory differs
            a, b = ([line for line in x if not line.startswith("out=")] for x in (a, b))
        assert a == b


def test_quantile_bench(capsys):
    code, out, _ = _run(capsys, "quantile-bench", "--n", "100000", "--dist", "lognormal", "--reps", "1")
    assert code == 0
    fields = dict(line.split("=") for line in out.splitlines())
    assert float(fields["max_deviation_central"]) < 1.0 and float(fields["ns_per_element"]) > 0


def test_bench_optim(capsys):
    code, out, _ = _run(capsys, "bench-optim", "--params", "10000", "--optimizer", "momentum8", "--reps", "5")
    assert code == 0 and "ms_per_update_per_1B_params=" in out


def test_embedding_stats(capsys):
    code, out, _ = _run(capsys, "embedding-stats", "--vocab", "1000", "--batch-sizes", "8")
    assert code == 0 and out.splitlines()[0].startswith("batch_size,max_median_ratio")


def test_threads_flag(tmp_path, capsys, monkeypatch):
    x = np.random.default_rng(0).standard_normal(200_000).astype("<f4")
    x.tofile(tmp_path / "x.f32")
    outs = []
    for t in ("1", "4"):
        p = tmp_path / f"x{t}.bqt"
        _run(capsys, "quantize", "--in", str(tmp_path / "x.f32"), "--out", str(p), "--threads", t)
        outs.append(p.read_bytes())
    monkeypatch.setenv("QOPT8_THREADS", "3")
    _run(capsys, "quantize", "--in", str(tmp_path / "x.f32"), "--out", str(tmp_path / "e.bqt"))
    assert outs[0] == outs[1] == (tmp_path / "e.bqt").read_bytes()
