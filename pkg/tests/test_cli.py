import io
import json
import os

import pytest

from nesy import bench, cli


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def _manifest(path):
    with open(os.path.join(path, "manifest.jsonl"), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


@pytest.mark.slow
def test_gen_shapes_manifest_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("gen", "shapes", "--seed", "1", "--out", str(a))[0] == 0
    assert run("gen", "shapes", "--seed", "1", "--out", str(b))[0] == 0
    ma, mb = _manifest(a), _manifest(b)
    assert ma == mb
    ppm = [m for m in ma if m["path"].endswith(".ppm")]
    assert len(ppm) == 2000
    with open(a / "annotations.jsonl", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh]
    assert len(records) == 2000
    assert {"id", "split", "label", "objects", "question"} <= set(records[0])
    assert set(ma[0]) == {"path", "bytes", "checksum"}


def test_gen_other_tasks(tmp_path):
    for task, name in (("mnist_sum", "images.idx"), ("toy_ner", "samples.jsonl"), ("math_inference", "samples.jsonl")):
        out = tmp_path / task
        code, _, err = run("gen", task, "--out", str(out))
        assert code == 0, err
        assert (out / name).exists()
        assert any(m["path"] == name for m in _manifest(out))


def test_gen_unwritable_dir():
    code, _, err = run("gen", "toy_ner", "--out", "/proc/nesy-denied")
    assert code == 2
    assert "/proc/nesy-denied" in err


def test_train_writes_metrics_and_checkpoint(tmp_path):
    code, out, err = run("train", "--task", "mnist_sum", "--epochs", "1", "--train-size", "30",
                         "--test-size", "10", "--out", str(tmp_path))
    assert code == 0, err
    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert {"sum_accuracy", "digit_accuracy", "train_ms_per_sample", "test_ms_per_sample"} <= set(payload["metrics"])
    assert (tmp_path / "digit.nsyn").read_bytes()[:4] == b"NSYN"
    code, out, err = run("eval", "--task", "mnist_sum", "--train-size", "30", "--test-size", "10",
                         "--checkpoints", str(tmp_path))
    assert code == 0, err
    assert json.loads(out)["sum_accuracy"] == payload["metrics"]["sum_accuracy"]


def test_train_primal_dual_reports_lambda(tmp_path):
    code, out, err = run("train", "--task", "toy_ner", "--interplay", "primal-dual", "--epochs", "1",
                         "--train-size", "30", "--test-size", "10", "--out", str(tmp_path))
    assert code == 0, err
    lam = json.loads(out)["lambda"]
    assert set(lam) == {"c1", "c2"} and all(v >= 0 for v in lam.values())


def test_train_uses_generated_data(tmp_path):
    data = tmp_path / "data"
    assert run("gen", "math_inference", "--out", str(data))[0] == 0
    code, _, err = run("train", "--task", "math_inference", "--data", str(data), "--epochs", "1",
                       "--train-size", "20", "--test-size", "10", "--out", str(tmp_path / "run"))
    assert code == 0, err


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("task = math_inference\nepochs = 1\ntrain_size = 20\ntest_size = 10\n")
    code, out, err = run("train", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 0, err
    assert "global_acc" in json.loads(out)


@pytest.mark.parametrize("argv", [
    ["train", "--task", "toy_ner", "--semiring", "topk:0"],
    ["train", "--task", "cifar"],
    ["gen", "nothing"],
    ["frobnicate"],
    ["train", "--task", "toy_ner", "--interplay", "magic"],
])
def test_config_errors_exit_1(argv, tmp_path):
    code, _, err = run(*argv, "--out", str(tmp_path)) if argv[0] != "frobnicate" else run(*argv)
    assert code == 1
    assert err


def test_eval_missing_checkpoint_exit_2(tmp_path):
    code, _, err = run("eval", "--task", "toy_ner", "--checkpoints", str(tmp_path), "--test-size", "5")
    assert code == 2 and "checkpoint" in err


def test_bad_idx_exit_2(tmp_path):
    (tmp_path / "images.idx").write_bytes(b"\x00\x00\x09\x99")
    (tmp_path / "labels.idx").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
    code, _, err = run("train", "--task", "mnist_sum", "--data", str(tmp_path), "--epochs", "1",
                       "--train-size", "2", "--test-size", "1", "--out", str(tmp_path / "o"))
    assert code == 2 and "magic" in err


def test_gradcheck_command():
    code, out, _ = run("gradcheck", "--instances", "50")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)


def test_bench_command(tmp_path):
    code, out, err = run("bench", "--tasks", "toy_ner,math_inference", "--modes", "reasoner,soft-constraint",
                         "--runs", "1", "--epochs", "1", "--train-size", "10", "--test-size", "5",
                         "--out", str(tmp_path))
    assert code == 0, err
    rows = bench.from_csv((tmp_path / "bench.csv").read_text())
    assert [(r.task, r.mode) for r in rows] == [
        ("toy_ner", "reasoner[exact]"), ("toy_ner", "soft-constraint[exact]"),
        ("math_inference", "reasoner[exact]"), ("math_inference", "soft-constraint[exact]")]
    assert (tmp_path / "bench.md").read_text().startswith("<!--")
    assert len(bench.from_jsonl((tmp_path / "bench.jsonl").read_text())) == 4
