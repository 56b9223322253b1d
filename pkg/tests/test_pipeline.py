import json
import os
import sys

import numpy as np
import pytest

from lmidrift.config import ExperimentConfig, worker_count
from lmidrift.errors import ConfigError, MetricError
from lmidrift.fixtures import write_jsonl
from lmidrift.metrics import FeaturePool, lmi_distribution
from lmidrift.pipeline import (DiagnosticsReport, emit_report, explanation_subset, kld_csv, preds_csv, run_experiment,
                               strip_timestamps)
from lmidrift.plots import plot_confusion, plot_lmi, plot_lmi_points

from conftest import GOLDEN, make_corpus

MOCK = [sys.executable, "-m", "lmidrift.mock_predictor"]


def small_config(fixture_dir, **kw):
    base = {"train": str(fixture_dir / "train.jsonl"), "test": str(fixture_dir / "test.jsonl"),
            "schema": {"id": "id", "text": "text", "label": "label"},
            "ratios": [0, 1], "seeds": [0], "sample_size": 20,
            "explanation": {"method": "shapley-sampled", "num_samples": 30}}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# -- config ------------------------------------------------------------------

def test_config_validation(fixture_dir):
    with pytest.raises(ConfigError, match="unknown config fields"):
        ExperimentConfig.from_dict({"train": "a", "test": "b", "colour": 1})
    with pytest.raises(ConfigError, match="required"):
        ExperimentConfig.from_dict({"train": "a"})
    with pytest.raises(ConfigError, match="outside"):
        small_config(fixture_dir, ratios=[0, 2])
    with pytest.raises(ConfigError, match="endpoint"):
        small_config(fixture_dir, model="external")
    with pytest.raises(ConfigError, match="method"):
        small_config(fixture_dir, explanation={"method": "lime"})
    with pytest.raises(ConfigError, match="ratios"):
        small_config(fixture_dir, ratios=[])
    with pytest.raises(ConfigError, match="k must"):
        small_config(fixture_dir, k=0)


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        ExperimentConfig.load(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(bad)


def test_config_paths_and_env(fixture_dir, monkeypatch):
    cfg = ExperimentConfig.load(fixture_dir / "config.json")
    assert cfg.resolve(cfg.train) == fixture_dir / "train.jsonl"
    assert cfg.output_dir() == fixture_dir / "out"
    monkeypatch.setenv("LMIDRIFT_OUT", "/tmp/elsewhere")
    assert str(cfg.output_dir()) == "/tmp/elsewhere"
    monkeypatch.setenv("LMIDRIFT_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("LMIDRIFT_WORKERS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_config_round_trip(fixture_dir):
    cfg = ExperimentConfig.load(fixture_dir / "config.json")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())), base_dir=cfg.base_dir)
    assert again == cfg and again.digest() == cfg.digest()


# -- run_experiment --------------------------------------------------------------

def test_structure_of_two_ratio_run(fixture_dir):
    report = run_experiment(small_config(fixture_dir))
    assert [a["ratio"] for a in report.aggregate] == [0, 1]
    r0, r1 = report.cell(0, 0), report.cell(1, 0)
    for name in report.labels:
        assert r0["splits"]["test"]["labels"][name]["kld_ori"] is None
        assert r0["splits"]["test"]["labels"][name]["kld_data"] is None
        assert r1["splits"]["test"]["labels"][name]["kld_ori"] is not None
    assert r1["train_size"] == 20 and r0["train_size"] == 0


def test_rerun_and_worker_count_are_byte_identical(fixture_dir):
    cfg = small_config(fixture_dir, seeds=[0, 1], ratios=[0, 0.5, 1])
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=3)
    ja = json.dumps(strip_timestamps(a.to_dict()), sort_keys=True)
    jb = json.dumps(strip_timestamps(b.to_dict()), sort_keys=True)
    assert ja == jb


def test_empty_subsample_is_skipped_not_fatal(fixture_dir):
    report = run_experiment(small_config(fixture_dir, ratios=[0, 0.01, 1]))
    skipped = report.cell(0.01, 0)
    assert skipped["status"] == "skipped" and "empty" in skipped["reason"]
    assert report.failures == [{"ratio": 0.01, "seed": 0, "status": "skipped", "reason": skipped["reason"]}]
    assert report.cell(1, 0)["status"] == "ok"


def test_explanation_subset_is_shared_across_ratios(fixture_dir):
    corpus = make_corpus([(f"w{i}", i % 2) for i in range(50)], split="test")
    a = explanation_subset(corpus, 10, seed=3, split="test")
    assert a == explanation_subset(corpus, 10, seed=3, split="test")
    assert len(a) == 10 and a == sorted(a)
    assert explanation_subset(corpus, 100, 3, "test") == list(range(50))


def test_artifacts_written(fixture_sweep):
    report, out = fixture_sweep
    for name in ("report.json", "preds.csv", "kld.csv", "top_features.txt"):
        assert (out / name).is_file()
    assert (out / "checkpoints" / "seed0" / "r0.5.json").is_file()
    lines = (out / "attributions" / "test" / "seed0_r0.5.jsonl").read_text().splitlines()
    assert len(lines) == 200 and json.loads(lines[0])["method"] == "shapley-sampled"
    assert (out / "plots" / "confusion_test_r1.svg").is_file()
    assert not (out / "failures.json").exists()


def test_report_round_trip(fixture_sweep):
    report, out = fixture_sweep
    text = (out / "report.json").read_text(encoding="utf-8")
    again = DiagnosticsReport.from_json(text)
    assert again.to_json() == text
    assert again.to_dict() == json.loads(text)


def test_emit_refuses_report_without_ratios(tmp_path, fixture_sweep):
    report, _ = fixture_sweep
    broken = DiagnosticsReport.from_dict(report.to_dict())
    broken.config["ratios"] = []
    with pytest.raises(ConfigError):
        emit_report(broken, tmp_path / "o")
    assert not (tmp_path / "o").exists()


def test_external_model_sweep(tmp_path):
    # label ids follow first appearance in the training file; the mock answers [neg, pos]
    corpus = make_corpus([("bad dull film", 0), ("good fun film", 1)] * 60)
    test = make_corpus([("good film", 1), ("bad film", 0), ("fun", 1), ("dull", 0)], split="test")
    write_jsonl(corpus, tmp_path / "train.jsonl")
    write_jsonl(test, tmp_path / "test.jsonl")
    cmd = " ".join(MOCK)
    cfg = ExperimentConfig.from_dict({
        "train": "train.jsonl", "test": "test.jsonl", "model": "external", "ratios": [0, 1], "seeds": [0],
        "endpoints": {"0": cmd + " --probs 0.5,0.5", "1": cmd}, "sample_size": 4,
        "explanation": {"method": "occlusion"}}, base_dir=tmp_path)
    report = run_experiment(cfg)
    assert not report.failures
    r1 = report.cell(1, 0)["splits"]["test"]
    assert r1["accuracy"] == 1.0
    assert r1["labels"]["pos"]["top_lmi"][:2] == ["fun", "good"]


def test_broken_endpoint_fails_one_cell(tmp_path):
    corpus = make_corpus([("good film", 1), ("bad film", 0)] * 60)
    write_jsonl(corpus, tmp_path / "train.jsonl")
    write_jsonl(corpus.select(range(4)), tmp_path / "test.jsonl")
    cmd = " ".join(MOCK)
    cfg = ExperimentConfig.from_dict({
        "train": "train.jsonl", "test": "test.jsonl", "model": "external", "ratios": [0, 1], "seeds": [0],
        "endpoints": {"0": cmd, "1": cmd + " --fault simplex"}, "sample_size": 2,
        "explanation": {"method": "occlusion"}}, base_dir=tmp_path)
    report = run_experiment(cfg)
    assert report.cell(0, 0)["status"] == "ok"
    assert report.cell(1, 0)["status"] == "failed" and "NonSimplex" in report.cell(1, 0)["reason"]


# -- goldens -----------------------------------------------------------------------

GOLDEN_FILES = ["preds.csv", "kld.csv", "plots/lmi_test_r0.5_pos.svg", "plots/confusion_test_r0.5.svg"]


@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_golden_files(fixture_sweep, name):
    _, out = fixture_sweep
    golden = GOLDEN / name.replace("plots/", "")
    if os.environ.get("LMIDRIFT_REGEN_GOLDEN"):
        golden.write_bytes((out / name).read_bytes())
    assert (out / name).read_bytes() == golden.read_bytes()


def test_csv_formats(fixture_sweep):
    report, _ = fixture_sweep
    preds = preds_csv(report).splitlines()
    assert preds[0] == "model,r,dataset,acc,pb" and len(preds) == 1 + 3 * 2
    kld = kld_csv(report).splitlines()
    assert kld[0] == "model,r,dataset,label,kld_ori,kld_data" and len(kld) == 1 + 3 * 2 * 2
    assert kld[1].endswith(",,")   # r=0 has no references


# -- plots -------------------------------------------------------------------------

def test_lmi_point_mass_plot(tmp_path, tiny_vocab):
    pool = FeaturePool()
    pool.add("good", 1)
    pool.add("bad", 0)
    dist = lmi_distribution(pool, tiny_vocab, 1)
    svg = plot_lmi(dist, tiny_vocab, tmp_path / "a.svg").read_text()
    assert svg.count("<circle") == 1 and svg.count('fill="#d62728">') == 1 and ">good</text>" in svg
    assert plot_lmi(dist, tiny_vocab, tmp_path / "b.svg").read_bytes() == (tmp_path / "a.svg").read_bytes()


def test_lmi_plot_refuses_degenerate(tmp_path, tiny_vocab):
    pool = FeaturePool()
    pool.add("good", 1)
    with pytest.raises(MetricError):
        plot_lmi(lmi_distribution(pool, tiny_vocab, 1), tiny_vocab, tmp_path / "x.svg")
    with pytest.raises(MetricError):
        plot_lmi_points([], 10, tmp_path / "y.svg")


def test_confusion_plot_shading(tmp_path):
    zeros = plot_confusion([[0, 0], [0, 0]], ["a", "b"], tmp_path / "z.svg").read_text()
    assert zeros.count('fill="#f7fcf5"') == 2 and zeros.count('fill="#fff0f5"') == 2
    assert zeros.count(">0</text>") == 4
    diag = plot_confusion([[5, 0], [0, 3]], ["a", "b"], tmp_path / "d.svg").read_text()
    assert 'fill="#006d2c"' in diag and "#c51b7d" not in diag
    with pytest.raises(ValueError):
        plot_confusion([[1, 2, 3]], ["a"], tmp_path / "bad.svg")
