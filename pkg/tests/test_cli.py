import json
import os

import numpy as np
import pytest

from data_io.run_store import CHECKPOINT_FILE, MODEL_FILE
from engine.cli import build_parser, main

TRAIN = ["--dataset", "synthetic", "--architecture", "miniconv", "--width", "4", "--epochs", "1",
         "--train-limit", "100", "--batch-size", "50"]


@pytest.fixture
def trained_run(tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", *TRAIN, "--output-dir", out, "--run-name", "r"]) == 0
    return os.path.join(out, "r")


def test_train_writes_run_directory(trained_run):
    for name in (MODEL_FILE, CHECKPOINT_FILE, "report.json", "config.txt", "metrics.csv"):
        assert os.path.exists(os.path.join(trained_run, name))
    with open(os.path.join(trained_run, "report.json")) as fh:
        report = json.load(fh)
    assert report["size"]["total"] == os.path.getsize(os.path.join(trained_run, MODEL_FILE))


def test_compress_reproduces_model_file(trained_run, tmp_path):
    out = str(tmp_path / "again.lnx")
    assert main(["compress", "--run", trained_run, "--out", out]) == 0
    with open(out, "rb") as a, open(os.path.join(trained_run, MODEL_FILE), "rb") as b:
        assert a.read() == b.read()


def test_decompress_writes_dense_weights(trained_run, tmp_path):
    out = str(tmp_path / "weights.npz")
    assert main(["decompress", "--model", os.path.join(trained_run, MODEL_FILE), "--out", out]) == 0
    with np.load(out) as arrays:
        assert arrays["conv1.weight"].ndim == 4
        assert "fc.bias" in arrays.files


def test_eval_bench_and_report(trained_run, capsys):
    model = os.path.join(trained_run, MODEL_FILE)
    assert main(["eval", "--model", model, "--dataset", "synthetic"]) == 0
    assert 0.0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1.0
    assert main(["report", "--model", model]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["size"]["total"] == os.path.getsize(model)
    assert main(["bench", "--model", model, "--dataset", "synthetic", "--bench-batch", "100"]) == 0
    bench = json.loads(capsys.readouterr().out)["bench"]
    assert bench["batch_size"] == 100 and bench["block_sparse_ms"] > 0


def test_report_over_sweep_root(tmp_path, capsys):
    out = str(tmp_path / "runs")
    assert main(["sweep", *TRAIN, "--lambda-u-grid", "0", "--lambda-s-grid", "0,0.5",
                 "--output-dir", out, "--run-name", "grid"]) == 0
    capsys.readouterr()
    assert main(["report", "--sweep-root", os.path.join(out, "grid")]) == 0
    assert "run_dir" in capsys.readouterr().out
    assert main(["report", "--sweep-root", os.path.join(out, "grid"), "--where", "lambda_s=0.5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and "lambda_s" in lines[0]
    assert main(["report", "--sweep-root", os.path.join(out, "grid"), "--where", "lambda_s=7"]) == 1
    with pytest.raises(SystemExit):
        build_parser().parse_args(["report", "--sweep-root", out, "--where", "lambda_s"])
    assert main(["report", "--sweep-root", str(tmp_path / "empty")]) == 1


def test_errors_map_to_exit_code(tmp_path):
    assert main(["report", "--model", str(tmp_path / "none.lnx")]) == 1
    bad = tmp_path / "bad.lnx"
    bad.write_bytes(b"garbage bytes")
    assert main(["decompress", "--model", str(bad), "--out", str(tmp_path / "w.npz")]) == 1
    assert main(["train", "--epochs", "0"]) == 1


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
