import json
import subprocess
import sys

import pytest

from lmidrift.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_usage_errors_exit_1(capsys):
    assert run_cli("frobnicate") == EXIT_USAGE
    assert run_cli("run") == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_config_exits_2_and_names_path(tmp_path, capsys):
    assert run_cli("run", "--config", tmp_path / "missing.json") == EXIT_FAIL
    assert "missing.json" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lmidrift", "run", "--config", str(tmp_path / "missing.json")],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 2 and "missing.json" in proc.stderr


def test_gen_fixture_is_deterministic(tmp_path):
    assert run_cli("gen-fixture", "--out", tmp_path / "a") == EXIT_OK
    assert run_cli("gen-fixture", "--out", tmp_path / "b") == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["config.json", "ood_test.jsonl", "test.jsonl", "train.jsonl"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_serve_check_mock():
    assert run_cli("serve-check") == EXIT_OK
    broken = f"{sys.executable} -m lmidrift.mock_predictor --fault simplex"
    assert run_cli("serve-check", "--endpoint", broken) == EXIT_FAIL


def test_train_explain_metrics_plot(tmp_path, fixture_dir, fixture_sweep, capsys):
    cfg = fixture_dir / "config.json"
    ck0, ck1 = tmp_path / "ck" / "r0.json", tmp_path / "ck" / "r1.json"
    assert run_cli("train", "--config", cfg, "--ratio", 0, "--out", ck0) == EXIT_OK
    assert run_cli("train", "--config", cfg, "--ratio", 1, "--out", ck1) == EXIT_OK
    a0, a1 = tmp_path / "a0.jsonl", tmp_path / "a1.jsonl"
    for ck, out in ((ck0, a0), (ck1, a1)):
        assert run_cli("explain", "--checkpoint", ck, "--data", fixture_dir / "test.jsonl", "--method", "occlusion",
                       "--limit", 30, "--out", out) == EXIT_OK
    assert len(a1.read_text().splitlines()) == 30
    out = tmp_path / "m.json"
    assert run_cli("metrics", "--attributions", a1, "--checkpoint", ck1, "--reference", a0,
                   "--data-reference", fixture_dir / "train.jsonl", "--out", out) == EXIT_OK
    m = json.loads(out.read_text())
    assert m["attributions"] == 30 and m["k"] == 6 and m["U"] == 10
    assert set(m["labels"]) == {"neg", "pos"}
    report = fixture_sweep[1] / "report.json"
    assert run_cli("plot", "--kind", "confusion", "--report", report, "--ratio", 0.5,
                   "--out", tmp_path / "c.svg") == EXIT_OK
    assert run_cli("plot", "--kind", "lmi", "--report", report, "--ratio", 0.5, "--label", "pos",
                   "--out", tmp_path / "l.svg") == EXIT_OK
    assert (tmp_path / "l.svg").read_bytes() == (fixture_sweep[1] / "plots" / "lmi_test_r0.5_pos.svg").read_bytes()
    assert run_cli("plot", "--kind", "lmi", "--report", report, "--ratio", 0.5, "--out", tmp_path / "x.svg") == EXIT_USAGE


def test_run_one_seed(tmp_path, fixture_dir):
    out = tmp_path / "run"
    assert run_cli("run", "--config", fixture_dir / "config.json", "--seed", 0, "--out", out, "--workers", 2) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seeds"] == [0]
    assert (out / "preds.csv").is_file()
