import re
import subprocess
import sys

import numpy as np
import pytest

from conftest import write_tree
from scbnet.architecture import build_architecture, init_params, spec_to_config
from scbnet.checkpoint import load_model, save_model
from scbnet.cli import main

ERROR_LINE = re.compile(r"^error\[[a-z-]+\]: \S.*$")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def assert_error_line(err):
    last = err.strip().splitlines()[-1]
    assert ERROR_LINE.match(last), err


@pytest.fixture
def trees(tmp_path):
    return write_tree(tmp_path / "train", 6, 6, seed=1), write_tree(tmp_path / "test", 3, 3, seed=2)


@pytest.fixture
def trained(trees, tmp_path, capsys):
    train_dir, _ = trees
    ckpt = tmp_path / "m.scbn"
    code, out, _ = run(capsys, "train", "--arch", "arch-1", "--train-data", str(train_dir),
                       "--resolution", "16", "--epochs", "2", "--batch-size", "6", "--out", str(ckpt))
    assert code == 0, out
    return ckpt


def test_train_writes_checkpoint_and_history(trained):
    spec, _ = load_model(trained)
    assert spec.name == "arch-1" and spec.input_resolution == 16
    lines = (trained.parent / "m.scbn.history.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc" and len(lines) == 3


def test_train_from_config_file(trees, tmp_path, capsys):
    cfg = tmp_path / "net.json"
    spec = build_architecture("arch-6").with_overrides(fc_sizes=(8,), input_resolution=8, name="tiny")
    cfg.write_text(spec_to_config(spec))
    code, _, err = run(capsys, "train", "--arch", str(cfg), "--train-data", str(trees[0]),
                       "--epochs", "1", "--out", str(tmp_path / "t.scbn"), "--history", str(tmp_path / "h.csv"))
    assert code == 0, err
    assert load_model(tmp_path / "t.scbn")[0] == spec
    assert (tmp_path / "h.csv").exists()


def test_train_missing_data_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--arch", "arch-1", "--out", str(tmp_path / "x"))
    assert code == 2
    assert_error_line(err)
    assert "--train-data" in err


def test_unknown_arch(trees, capsys, tmp_path):
    code, _, err = run(capsys, "train", "--arch", "arch-99", "--train-data", str(trees[0]),
                       "--out", str(tmp_path / "x"))
    assert code == 1
    assert_error_line(err)
    assert err.startswith("error[lookup]") and "arch-10" in err


def test_eval_prints_and_appends(trained, trees, tmp_path, capsys):
    rows = tmp_path / "rows.csv"
    for _ in range(2):
        code, out, _ = run(capsys, "eval", "--model", str(trained), "--test-data", str(trees[1]),
                           "--append", str(rows))
        assert code == 0
    assert re.search(r"^accuracy: \d+\.\d\d$", out, re.M)
    assert re.search(r"tp=\d+ tn=\d+ fp=\d+ fn=\d+ n=6", out)
    lines = rows.read_text().splitlines()
    assert lines[0] == "model,test_data,accuracy,tp,tn,fp,fn,n" and len(lines) == 3
    assert lines[1].split(",")[-1] == "6"


def test_eval_resolution_mismatch(trained, trees, capsys):
    code, _, err = run(capsys, "eval", "--model", str(trained), "--test-data", str(trees[1]),
                       "--resolution", "32")
    assert code == 1 and err.startswith("error[shape]")


def test_eval_corrupt_checkpoint(tmp_path, trees, capsys):
    bad = tmp_path / "bad.scbn"
    bad.write_bytes(b"SCBN\x01")
    code, _, err = run(capsys, "eval", "--model", str(bad), "--test-data", str(trees[1]))
    assert code == 1 and err.startswith("error[checkpoint-truncated]")


def test_missing_model_file(tmp_path, trees, capsys):
    code, _, err = run(capsys, "eval", "--model", str(tmp_path / "none.scbn"), "--test-data", str(trees[1]))
    assert code == 1
    assert_error_line(err)


def test_predict_zero_model(tmp_path, trees, capsys):
    spec = build_architecture("arch-1").with_overrides(fc_sizes=(4,), input_resolution=8)
    params = init_params(spec)
    for a in params.trainable().values():
        a[...] = 0
    save_model(spec, params, tmp_path / "z.scbn")
    imgs = [str(trees[1] / "yes" / "yes_001.png"), str(trees[1] / "no" / "no_000.png"),
            str(trees[1] / "yes" / "yes_000.png")]
    code, out, _ = run(capsys, "predict", "--model", str(tmp_path / "z.scbn"), "--image", *imgs)
    assert code == 0
    lines = out.strip().splitlines()
    assert [l.split(",")[0] for l in lines] == imgs
    assert all(l.split(",")[1:] == ["0.5000", "no-tumor"] for l in lines)


def test_predict_unreadable_image(trained, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_text("nope")
    code, _, err = run(capsys, "predict", "--model", str(trained), "--image", str(bad))
    assert code == 1 and err.startswith("error[decode]")
    assert_error_line(err)


def test_sweep_dry_run(tmp_path, capsys):
    out_file = tmp_path / "tables.txt"
    code, out, _ = run(capsys, "sweep", "--dry-run", "--out", str(out_file))
    assert code == 0
    assert "Table 1" in out and "Table 2" in out
    assert out_file.read_text() == out
    assert len([l for l in out.splitlines() if l.startswith("ARCH-")]) == 20


def test_sweep_without_data_is_usage_error(capsys):
    code, _, err = run(capsys, "sweep")
    assert code == 2 and err.startswith("error[usage]")


def test_sweep_rejects_overlapping_sets(trees, capsys):
    code, _, err = run(capsys, "sweep", "--train-data", str(trees[0]), "--test-data", str(trees[0]),
                       "--archs", "arch-1", "--resolution", "16", "--epochs", "1")
    assert code == 1 and err.startswith("error[protocol]")


def test_sweep_small_grid(trees, tmp_path, capsys):
    args = ["sweep", "--train-data", str(trees[0]), "--test-data", str(trees[1]), "--archs", "arch-1",
            "--resolution", "16", "--epochs", "1", "--batch-size", "6", "--seed", "3", "--format", "csv"]
    code, out1, _ = run(capsys, *args, "--results", str(tmp_path / "r.csv"))
    assert code == 0
    _, out2, _ = run(capsys, *args)
    assert out1 == out2
    rows = [l.split(",") for l in out1.splitlines() if l.startswith("ARCH-1,")]
    assert len(rows) == 2 and all(re.fullmatch(r"\d+\.\d\d", r[-1]) for r in rows)
    assert (tmp_path / "r.csv").read_text().startswith("arch,augment,seed,accuracy")


def test_gradcheck_subset_and_fault(capsys):
    code, out, _ = run(capsys, "gradcheck", "--archs", "arch-1,arch-6")
    assert code == 0
    assert out.strip().splitlines()[-1] == "9/9 checks passed"
    assert "tol 0.01" in out
    code, out, _ = run(capsys, "gradcheck", "--archs", "arch-1", "--inject-fault", "conv2d:conv.weight")
    assert code == 1 and "FAIL conv2d" in out
    code, out, _ = run(capsys, "gradcheck", "--archs", "arch-6", "--inject-fault", "arch-6:scb.skip.conv.weight")
    assert code == 1 and "FAIL network arch-6" in out


def test_gradcheck_float64(capsys):
    code, out, _ = run(capsys, "gradcheck", "--archs", "arch-7", "--float64")
    assert code == 0 and "tol 1e-05" in out


def test_module_entry_point_exit_codes(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scbnet", "train", "--arch", "arch-1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert ERROR_LINE.match(proc.stderr.strip())
