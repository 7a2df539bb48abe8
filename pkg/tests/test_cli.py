import json
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from qnn_guard.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_USAGE, dispatch
from qnn_guard.config import load_config, resolve_jobs
from qnn_guard.constants import JOBS_ENV
from qnn_guard.errors import ConfigError
from qnn_guard.manifest import config_hash, read_manifest

BUNDLE = {
    "model": "desk/desk-model.json",
    "weights": "desk/desk-weights.bin",
    "dataset": "desk/desk-images-idx3-ubyte",
}


@pytest.fixture
def workspace(tmp_path):
    assert dispatch(["make-desk", "--out", str(tmp_path / "desk"), "--per-class", "5",
                     "--log-dir", str(tmp_path / "logs")]) == EXIT_OK
    return tmp_path


def write_config(directory, name, data):
    path = directory / name
    path.write_text(json.dumps(data))
    return path


def run(workspace, command, config, out, *extra):
    argv = [command, "--config", str(config), "--out", str(workspace / out),
            "--log-dir", str(workspace / "logs"), *extra]
    return dispatch(argv)


def campaign_config(p=0.0, seed=5, **campaign):
    section = {"mode": "bernoulli", "p": p, "target_mask": "whole_word", "n_runs": 4}
    if seed is not None:
        section["master_seed"] = seed
    section.update(campaign)
    return {"bundle": BUNDLE, "layout": {"W": 16, "b": 8, "J": 1, "R": 2, "policy": "majority"}, "campaign": section}


def explore_config():
    return {
        "bundle": BUNDLE,
        "grid": {"bitwidths": [4, 8], "protected_bits": [0, 1], "copies": [0, 2],
                 "policies": ["majority"], "word_width": 16},
        "thresholds": {"min_clean_accuracy": 0.5, "rate_floors": [{"rate": 0.001, "min_accuracy": 0.3}]},
        "campaign": {"master_seed": 8, "n_runs": 3, "eval_subset_size": 30, "extra_rates": [0.01]},
    }


def test_make_desk_writes_bundle_and_manifest(workspace):
    names = {p.name for p in (workspace / "desk").iterdir()}
    assert {"desk-model.json", "desk-weights.bin", "desk-images-idx3-ubyte",
            "desk-labels-idx1-ubyte", "manifest.json"} <= names
    manifest = read_manifest(workspace / "desk")
    assert manifest.command == "make-desk"
    assert "desk-model.json" in manifest.outputs
    assert manifest.verify()


def test_quantize_and_protect(workspace):
    quant = write_config(workspace, "quantize.json", {"bundle": BUNDLE, "bitwidth": 8})
    assert run(workspace, "quantize", quant, "q") == EXIT_OK
    report = json.loads((workspace / "q" / "quantize_report.json").read_text())
    assert report["quantized_accuracy"] >= report["float_accuracy"] - 0.01

    prot = write_config(workspace, "protect.json", {"bundle": BUNDLE, "layout": {"W": 16, "b": 8, "J": 1, "R": 2}})
    assert run(workspace, "protect", prot, "p") == EXIT_OK
    report = json.loads((workspace / "p" / "protect_report.json").read_text())
    assert report["bits_per_param"] == 10
    assert report["overhead_fraction"] == -0.6875
    assert (workspace / "p" / "protected.bin").exists()


def test_inject_single_copy_fault(workspace):
    prot = write_config(workspace, "protect.json", {"bundle": BUNDLE, "layout": {"W": 16, "b": 8, "J": 1, "R": 2}})
    assert run(workspace, "protect", prot, "p") == EXIT_OK
    cfg = write_config(workspace, "inject.json", {
        "bundle": BUNDLE,
        "image": "p/protected.json",
        "fault": {"mode": "exact_k", "k": 1, "target_mask": "protection_bits_only", "master_seed": 3},
    })
    assert run(workspace, "inject", cfg, "i") == EXIT_OK
    report = json.loads((workspace / "i" / "inject_report.json").read_text())
    assert report["flips"] == 1
    assert report["corrections"] == 1
    assert report["accuracy"] == report["clean_accuracy"]


def test_campaign_without_faults(workspace):
    cfg = write_config(workspace, "campaign.json", campaign_config(p=0.0))
    assert run(workspace, "campaign", cfg, "c") == EXIT_OK
    result = json.loads((workspace / "c" / "campaign.json").read_text())
    assert result["accuracies"] == [result["clean_accuracy"]] * 4
    rows = (workspace / "c" / "campaign.csv").read_text().splitlines()
    assert rows[0] == "run_index,accuracy,flips,corrections"
    assert len(rows) == 5
    manifest = read_manifest(workspace / "c")
    assert manifest.master_seed == 5
    assert manifest.config_hash == config_hash(manifest.config)


def test_seed_flag_overrides_config(workspace):
    cfg = write_config(workspace, "campaign.json", campaign_config(p=0.01))
    assert run(workspace, "campaign", cfg, "c", "--seed", "77") == EXIT_OK
    result = json.loads((workspace / "c" / "campaign.json").read_text())
    assert result["fault_model"]["master_seed"] == 77
    assert read_manifest(workspace / "c").master_seed == 77


def test_bit_sensitivity_output(workspace):
    cfg = write_config(workspace, "campaign.json", campaign_config(p=0.01, n_runs=2, bit_sensitivity=True))
    assert run(workspace, "campaign", cfg, "c") == EXIT_OK
    rows = (workspace / "c" / "bit_sensitivity.csv").read_text().splitlines()
    assert len(rows) == 1 + 16


def test_missing_seed_is_config_error(workspace, capsys):
    cfg = write_config(workspace, "campaign.json", campaign_config(seed=None))
    assert run(workspace, "campaign", cfg, "c") == EXIT_CONFIG
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "invalid_config"
    assert error["field"] == "campaign.master_seed"


def test_bad_field_reports_path(workspace, capsys):
    cfg = write_config(workspace, "campaign.json", campaign_config(p=2.0))
    assert run(workspace, "campaign", cfg, "c") == EXIT_CONFIG
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["field"] == "campaign.p"


def test_invalid_layout_is_config_error(workspace):
    data = campaign_config()
    data["layout"]["R"] = 1
    cfg = write_config(workspace, "campaign.json", data)
    assert run(workspace, "campaign", cfg, "c") == EXIT_CONFIG


def test_missing_bundle_file_fails(workspace, capsys):
    data = campaign_config()
    data["bundle"] = dict(BUNDLE, weights="desk/nowhere.bin")
    cfg = write_config(workspace, "campaign.json", data)
    assert run(workspace, "campaign", cfg, "c") == EXIT_FAILED
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "io_error"


def last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_non_finite_weights_fail_with_json_error(workspace, capsys):
    blob = workspace / "desk" / "desk-weights.bin"
    values = np.fromfile(blob, dtype="<f8")
    values[0] = np.nan
    values.tofile(blob)
    cfg = write_config(workspace, "quantize.json", {"bundle": BUNDLE, "bitwidth": 8})
    assert run(workspace, "quantize", cfg, "q") == EXIT_FAILED
    error = last_error(capsys)
    assert error["error"] == "format_error"
    assert "finite" in error["message"]


def test_non_numeric_layer_field_fails_with_json_error(workspace, capsys):
    model_json = workspace / "desk" / "desk-model.json"
    description = json.loads(model_json.read_text())
    description["layers"][0]["in"] = "many"
    model_json.write_text(json.dumps(description))
    cfg = write_config(workspace, "quantize.json", {"bundle": BUNDLE, "bitwidth": 8})
    assert run(workspace, "quantize", cfg, "q") == EXIT_FAILED
    assert last_error(capsys)["error"] == "format_error"


@pytest.mark.parametrize("text, fragment", [
    ("{not json", "not valid JSON"),
    ('{"points": [], "settings": {}}', "thresholds"),
    ("[1, 2]", "JSON object"),
])
def test_report_on_malformed_input_fails_with_json_error(workspace, capsys, text, fragment):
    (workspace / "broken.json").write_text(text)
    cfg = write_config(workspace, "report.json", {"inputs": ["broken.json"]})
    assert run(workspace, "report", cfg, "r") == EXIT_FAILED
    error = last_error(capsys)
    assert error["error"] == "plot_data"
    assert fragment in error["message"]


def test_trained_desk_bundle_quantizes_within_a_point(tmp_path):
    assert dispatch(["make-desk", "--model", "trained", "--out", str(tmp_path / "desk"),
                     "--log-dir", str(tmp_path / "logs")]) == EXIT_OK
    for bits in (8, 16):
        cfg = write_config(tmp_path, f"q{bits}.json", {"bundle": BUNDLE, "bitwidth": bits})
        assert run(tmp_path, "quantize", cfg, f"q{bits}") == EXIT_OK
    q8 = json.loads((tmp_path / "q8" / "quantize_report.json").read_text())
    q16 = json.loads((tmp_path / "q16" / "quantize_report.json").read_text())
    assert q8["float_accuracy"] >= 0.9
    assert q8["reconstruction"][0]["max_abs"] > 0.0
    assert q8["float_accuracy"] - q8["quantized_accuracy"] <= 0.01
    assert q16["quantized_accuracy"] == q16["float_accuracy"]
    assert read_manifest(tmp_path / "desk").config["model"] == "trained"


def test_unknown_flag_is_usage_error(workspace):
    assert dispatch(["campaign", "--bogus"]) == EXIT_USAGE
    assert dispatch(["frobnicate"]) == EXIT_USAGE


def test_explore_twice_is_byte_identical(workspace):
    cfg = write_config(workspace, "explore.json", explore_config())
    assert run(workspace, "explore", cfg, "e1") == EXIT_OK
    assert run(workspace, "explore", cfg, "e2", "--jobs", "2") == EXIT_OK
    first = sorted(p.relative_to(workspace / "e1") for p in (workspace / "e1").rglob("*") if p.is_file())
    second = sorted(p.relative_to(workspace / "e2") for p in (workspace / "e2").rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        if rel.name == "manifest.json":
            continue
        assert (workspace / "e1" / rel).read_bytes() == (workspace / "e2" / rel).read_bytes(), rel
    assert (workspace / "e1" / "curves" / "curves.csv").exists()


def test_report_on_campaign_outputs(workspace):
    for i, p in enumerate((1e-3, 1e-2)):
        cfg = write_config(workspace, f"c{i}.json", campaign_config(p=p))
        assert run(workspace, "campaign", cfg, f"c{i}") == EXIT_OK
    cfg = write_config(workspace, "report.json", {"inputs": ["c0/campaign.json", "c1/campaign.json"]})
    assert run(workspace, "report", cfg, "r") == EXIT_OK
    lines = (workspace / "r" / "curve_b8_j1_r2_majority_w16.csv").read_text().splitlines()
    assert lines[0] == "design_point,rate,mean_accuracy,ci_low,ci_high"
    assert [line.split(",")[1] for line in lines[1:]] == ["0.001", "0.01"]


def test_jobs_resolution(monkeypatch):
    monkeypatch.delenv(JOBS_ENV, raising=False)
    assert resolve_jobs(None) == 1
    monkeypatch.setenv(JOBS_ENV, "3")
    assert resolve_jobs(None) == 3
    assert resolve_jobs(2) == 2
    monkeypatch.setenv(JOBS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_jobs(None)
    with pytest.raises(ConfigError):
        resolve_jobs(0)


def test_config_paths_are_relative_to_the_file(workspace):
    cfg = write_config(workspace, "campaign.json", campaign_config())
    parsed, raw = load_config("campaign", cfg)
    assert parsed.bundle.model == workspace / "desk" / "desk-model.json"
    assert raw["campaign"]["master_seed"] == 5
