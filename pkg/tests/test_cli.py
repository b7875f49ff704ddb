import csv
import json

import numpy as np
import pytest

from horesnet import cli
from horesnet.network import read_checkpoint


def run(argv, capsys=None):
    code = cli.main(argv)
    return code


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_ode_verify_three_schemes(tmp_path):
    assert run(["ode-verify", "--schemes", "euler,midpoint,rk4", "--out", str(tmp_path)]) == 0
    out = rows(tmp_path / "ode-verify" / "orders.csv")
    assert len(out) == 9
    assert {r["problem"] for r in out} == {"growth", "gaussian", "rotation"}
    assert (tmp_path / "ode-verify" / "errors.svg").exists()


def test_ode_verify_single_scheme_passes(tmp_path):
    assert run(["ode-verify", "--schemes", "rk4", "--out", str(tmp_path)]) == 0


def test_ode_verify_unknown_scheme(tmp_path, capsys):
    assert run(["ode-verify", "--schemes", "rk17", "--out", str(tmp_path)]) == 2
    assert "euler" in capsys.readouterr().err


def test_ode_verify_out_of_tolerance_is_nonzero(tmp_path):
    assert run(["ode-verify", "--schemes", "verner", "--out", str(tmp_path)]) != 0


def test_dump_tableau(capsys):
    assert run(["dump-tableau", "rk4"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["stages"] == 4 and d["retained_shortcuts"] == 4
    assert run(["dump-tableau", "nope"]) == 2


def test_usage_errors(tmp_path):
    assert run(["train", "--scheme", "rk4", "--depth", "7", "--out", str(tmp_path)]) == 2
    assert run(["sweep", "lr", "--grid", "", "--out", str(tmp_path)]) == 2
    assert run(["sweep", "degradation", "--depths", "", "--out", str(tmp_path)]) == 2
    assert run(["frobnicate"]) == 2


def test_train_zero_epochs(tmp_path):
    assert run(["train", "--scheme", "euler", "--depth", "10", "--epochs", "0", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "train" / "report.json").read_text())
    assert rep["records"] == []
    assert (tmp_path / "train" / "final.ckpt").exists()


def test_train_default_epochs_from_config(tmp_path):
    cfg = cli.resolve_config(cli.build_parser().parse_args(["train", "--scheme", "rk4", "--depth", "58"]))
    assert cfg.train.epochs == 260 and cfg.train.milestones == [100, 150, 200, 230] and cfg.train.lr0 == 0.1


def test_divergence_is_exit_zero(tmp_path):
    argv = ["train", "--scheme", "euler", "--depth", "10", "--epochs", "3", "--lr", "1e9", "--out", str(tmp_path)]
    assert run(argv) == 0
    rep = json.loads((tmp_path / "train" / "report.json").read_text())
    assert rep["results"]["diverged"] is True


def test_resume_is_bit_exact(tmp_path):
    base = ["train", "--scheme", "midpoint", "--depth", "18", "--width", "6", "--n-per-class", "60",
            "--epochs", "6", "--lr", "0.05", "--checkpoint-every", "3", "--seed", "4", "--out", str(tmp_path)]
    assert run(base + ["--run-name", "full"]) == 0
    ck = tmp_path / "full" / "checkpoint-epoch0003.ckpt"
    assert run(["train", "--resume", str(ck), "--out", str(tmp_path), "--run-name", "resumed"]) == 0
    a, b = rows(tmp_path / "full" / "records.csv"), rows(tmp_path / "resumed" / "records.csv")
    keys = ["epoch", "lr", "train_loss", "train_acc", "test_loss", "test_acc", "diverged"]
    assert [[r[k] for k in keys] for r in a] == [[r[k] for k in keys] for r in b]
    ta = read_checkpoint(tmp_path / "full" / "final.ckpt")[1]
    tb = read_checkpoint(tmp_path / "resumed" / "final.ckpt")[1]
    assert ta.keys() == tb.keys() and all(np.array_equal(ta[k], tb[k]) for k in ta)


def test_config_file_and_flag_precedence(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"width": 5, "depth": 18, "train": {"lr0": 0.02, "epochs": 1, "milestones": []}}))
    args = cli.build_parser().parse_args(["train", "--config", str(cfg_path), "--width", "7"])
    cfg = cli.resolve_config(args)
    assert cfg.width == 7 and cfg.depth == 18 and cfg.train.lr0 == 0.02


def test_report_replays_to_identical_csv(tmp_path):
    argv = ["sweep", "lr", "--schemes", "euler", "--grid", "0.01,0.1,1e9", "--epochs", "1", "--depth", "10",
            "--width", "4", "--n-per-class", "30", "--out", str(tmp_path), "--run-name", "first"]
    assert run(argv) == 0
    report = tmp_path / "first" / "report.json"
    assert run(["sweep", "lr", "--config", str(report), "--out", str(tmp_path), "--run-name", "replay"]) == 0
    assert (tmp_path / "first" / "lr_sweep.csv").read_text() == (tmp_path / "replay" / "lr_sweep.csv").read_text()


def test_sweep_lr_grid_arithmetic(tmp_path):
    assert cli.parse_grid("0.05:0.45:0.05") == pytest.approx([0.05 * i for i in range(1, 10)])
    argv = ["sweep", "lr", "--schemes", "euler,midpoint,rk4", "--grid", "0.05:0.45:0.05", "--epochs", "1",
            "--width", "4", "--n-per-class", "20", "--out", str(tmp_path)]
    assert run(argv) == 0
    assert len(rows(tmp_path / "sweep-lr" / "lr_sweep.csv")) == 27


def test_sweep_init_probe_rows(tmp_path):
    argv = ["sweep", "init-probe", "--seeds", "3", "--depth", "58", "--width", "4", "--out", str(tmp_path)]
    assert run(argv) == 0
    out = rows(tmp_path / "sweep-init-probe" / "init_probe.csv")
    assert [r["scheme"] for r in out] == ["euler", "midpoint", "rk4", "verner"]
    assert all({"min", "max", "spread"} <= set(r) for r in out)


def test_sweep_degradation_curve(tmp_path):
    argv = ["sweep", "degradation", "--scheme", "euler", "--depths", "10,18,30,58,86", "--seeds", "1",
            "--epochs", "1", "--width", "4", "--n-per-class", "20", "--out", str(tmp_path)]
    assert run(argv) == 0
    assert len(rows(tmp_path / "sweep-degradation" / "degradation.csv")) == 5


def test_sweep_time_to_threshold(tmp_path):
    argv = ["sweep", "time-to-threshold", "--schemes", "euler,rk4", "--seeds", "1", "--epochs", "2",
            "--depth", "18", "--width", "4", "--n-per-class", "20", "--out", str(tmp_path)]
    assert run(argv) == 0
    assert len(rows(tmp_path / "sweep-time-to-threshold" / "time_to_threshold.csv")) == 2


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "envroot"))
    assert run(["ode-verify", "--schemes", "euler"]) == 0
    assert (tmp_path / "envroot" / "ode-verify" / "report.json").exists()


def test_report_lists_only_existing_files(tmp_path, capsys):
    assert run(["ode-verify", "--schemes", "euler", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "ode-verify" / "report.json").read_text())
    assert all((tmp_path / "ode-verify" / f).exists() for f in rep["artifacts"])
    assert rep["schema_version"] == cli.SCHEMA_VERSION and "euler" in rep["tableau_digests"]
    assert run(["report", str(tmp_path / "ode-verify")]) == 0
    (tmp_path / "ode-verify" / "errors.svg").unlink()
    assert run(["report", str(tmp_path / "ode-verify")]) == 1


def test_missing_report_is_io_error(tmp_path):
    assert run(["report", str(tmp_path / "nowhere")]) == 1


def test_cifar_without_data_dir(tmp_path):
    assert run(["train", "--task", "cifar10", "--scheme", "euler", "--depth", "10", "--out", str(tmp_path)]) == 2
