"""Tests for the ruptura command line."""
from __future__ import annotations

import json

import pandas as pd
import pytest

from ruptura import __version__
from ruptura._utils import load_json
from ruptura.cli import build_parser, main, manifest_path
from ruptura.rdd_estimator import OUTCOME_COLUMNS
from ruptura.synth_oracle import SynthConfig, generate, save_synth


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

@pytest.fixture
def synth_files(tmp_path):
    synth = generate(SynthConfig(n_regions=20, seed=13, noise_sigma=0.3))
    return save_synth(synth, tmp_path / "inputs")


def _write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ---------------------------------------------------------------------------
# Usage errors
# ---------------------------------------------------------------------------

def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_subcommand_is_a_usage_error():
    assert main(["frobnicate"]) == 2


def test_bad_hyperparameter_is_a_usage_error(tmp_path, capsys):
    code = main(["train", "--family", "ridge", "--alpha", "-1", "--out", str(tmp_path / "m")])
    assert code == 2
    error = _error(capsys)
    assert error["error"] == "CONFIG_ERROR"
    assert "alpha" in error["message"]


def test_unknown_config_key_is_a_usage_error(tmp_path, capsys):
    config = _write_json(tmp_path / "c.json", {"panel": "p.csv", "colour": "blue"})
    assert main(["estimate", "--config", str(config)]) == 2
    assert "colour" in _error(capsys)["message"]


def test_missing_required_option(capsys):
    assert main(["estimate", "--event-type", "first_case"]) == 2
    assert "--panel" in _error(capsys)["message"]


def test_malformed_list_options_are_usage_errors(tmp_path, synth_files, capsys):
    estimate = [
        "estimate",
        "--panel", str(synth_files["panel"]),
        "--events", str(synth_files["events"]),
        "--score-name", "anxiety",
        "--event-type", "first_case",
        "--ablate-buffers", "a,b",
        "--out", str(tmp_path / "outcomes.csv"),
    ]
    assert main(estimate) == 2
    error = _error(capsys)
    assert error["error"] == "CONFIG_ERROR"
    assert "'a,b'" in error["message"]

    placebo = ["placebo", "--panel", str(synth_files["panel"]), "--half-widths", "x"]
    assert main(placebo + ["--out", str(tmp_path / "placebo.json")]) == 2
    assert _error(capsys)["error"] == "CONFIG_ERROR"


def test_global_flags_accepted_after_subcommand():
    args = build_parser().parse_args(["placebo", "--seed", "4", "--threads", "2"])
    assert args.seed == 4
    assert args.threads == 2
    args = build_parser().parse_args(["--seed", "4", "placebo"])
    assert args.seed == 4


# ---------------------------------------------------------------------------
# Domain errors
# ---------------------------------------------------------------------------

def test_unparseable_panel_is_a_domain_error(tmp_path, capsys):
    panel = tmp_path / "panel.csv"
    panel.write_text("region_id,week_index,score,n_users\n1,1,oops,300\n", encoding="utf-8")
    events = tmp_path / "events.csv"
    events.write_text("region_id,event_type,event_week\n", encoding="utf-8")
    code = main(
        [
            "estimate",
            "--panel", str(panel),
            "--events", str(events),
            "--event-type", "first_case",
            "--out", str(tmp_path / "out.csv"),
        ]
    )
    assert code == 1
    error = _error(capsys)
    assert error["error"] == "PARSE_ERROR"
    assert error["details"]["line"] == 2


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def test_estimate_with_header_only_events(tmp_path, synth_files):
    events = tmp_path / "events.csv"
    events.write_text("region_id,event_type,event_week\n", encoding="utf-8")
    out = tmp_path / "outcomes.csv"
    code = main(
        [
            "estimate",
            "--panel", str(synth_files["panel"]),
            "--events", str(events),
            "--event-type", "first_case",
            "--out", str(out),
        ]
    )
    assert code == 0
    assert out.read_text().strip() == ",".join(OUTCOME_COLUMNS)
    stats = load_json(tmp_path / "outcomes.stats.json")
    assert stats["n_outcomes"] == 0
    assert stats["stats"] == {}
    manifest = load_json(manifest_path(out))
    assert manifest["subcommand"] == "estimate"
    assert set(manifest["inputs"]) == {"panel", "events"}


def test_estimate_with_ablation_strata_and_profile(tmp_path, synth_files):
    out = tmp_path / "outcomes.csv"
    code = main(
        [
            "estimate",
            "--panel", str(synth_files["panel"]),
            "--events", str(synth_files["events"]),
            "--meta", str(synth_files["meta"]),
            "--score-name", "anxiety",
            "--event-type", "first_case",
            "--ablate-buffers", "0,1,2",
            "--strata", "urbanicity",
            "--profile-out", str(tmp_path / "profile.csv"),
            "--out", str(out),
        ]
    )
    assert code == 0
    assert len(pd.read_csv(out)) == 20
    stats = load_json(tmp_path / "outcomes.stats.json")
    assert sorted(stats["buffer_ablation"]) == ["0", "1", "2"]
    assert sorted(stats["strata"]) == ["high", "low", "medium"]
    assert len(pd.read_csv(tmp_path / "profile.csv")) == 19


def test_placebo_writes_summary(tmp_path, synth_files):
    out = tmp_path / "placebo.json"
    args = ["placebo", "--panel", str(synth_files["panel"]), "--n-episodes", "40"]
    assert main(args + ["--seed", "3", "--out", str(out)]) == 0
    summary = load_json(out)
    assert summary["n_episodes"] == 40
    assert summary["seed"] == 3
    assert load_json(manifest_path(out))["seed"] == 3

    by_width = tmp_path / "by_width.json"
    assert main(args + ["--seed", "3", "--half-widths", "5,9", "--out", str(by_width)]) == 0
    assert sorted(load_json(by_width)["by_half_width"]) == ["5", "9"]


def test_placebo_seed_from_environment(tmp_path, synth_files, monkeypatch):
    monkeypatch.setenv("RUPTURA_SEED", "8")
    out = tmp_path / "placebo.json"
    code = main(
        ["placebo", "--panel", str(synth_files["panel"]), "--n-episodes", "10", "--out", str(out)]
    )
    assert code == 0
    assert load_json(out)["seed"] == 8


def test_features_train_evaluate_chain(tmp_path, synth_files):
    dataset = tmp_path / "dataset.csv"
    model = tmp_path / "model.joblib"
    report = tmp_path / "report.json"
    predictions = tmp_path / "predictions.csv"
    assert main(
        [
            "features",
            "--panel", str(synth_files["panel"]),
            "--events", str(synth_files["events"]),
            "--embeddings", str(synth_files["embeddings"]),
            "--features", "P,RC,exog",
            "--event-type", "first_case",
            "--out", str(dataset),
        ]
    ) == 0
    assert (tmp_path / "dataset.layout.json").exists()
    assert main(
        [
            "train",
            "--dataset", str(dataset),
            "--family", "knn",
            "--k", "3",
            "--seed", "2",
            "--out", str(model),
        ]
    ) == 0
    assert main(
        [
            "evaluate",
            "--model", str(model),
            "--dataset", str(dataset),
            "--meta", str(synth_files["meta"]),
            "--strata", "ses",
            "--predictions-out", str(predictions),
            "--out", str(report),
        ]
    ) == 0
    result = load_json(report)
    assert result["model"] == "knn"
    assert result["baseline"] == "baseline_mean"
    assert result["n_test"] == 4
    assert len(pd.read_csv(predictions)) == 4
    assert load_json(manifest_path(report))["seed"] == 2


def test_did_subcommand(tmp_path, synth_files):
    truth = load_json(synth_files["truth"])["regions"]
    target = min(truth, key=lambda r: truth[r]["event_week"])
    out = tmp_path / "did.json"
    code = main(
        [
            "did",
            "--panel", str(synth_files["panel"]),
            "--events", str(synth_files["events"]),
            "--meta", str(synth_files["meta"]),
            "--event-type", "first_case",
            "--target", target,
            "--k", "2",
            "--out", str(out),
        ]
    )
    assert code == 0
    result = load_json(out)
    assert result["target_region"] == target
    assert len(result["matched_regions"]) == 2


def test_synth_subcommand(tmp_path):
    out_dir = tmp_path / "synth"
    config = _write_json(tmp_path / "synth.json", {"missing_rate": 0.1})
    code = main(
        [
            "synth",
            "--seed", "6",
            "--n-regions", "5",
            "--config", str(config),
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    truth = load_json(out_dir / "truth.json")
    assert truth["config"]["n_regions"] == 5
    assert truth["config"]["missing_rate"] == 0.1
    manifest = load_json(out_dir / "truth.manifest.json")
    assert manifest["config"]["missing_rate"] == 0.1
    assert "config" in manifest["inputs"]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _pipeline(tmp_path, threads):
    config = _write_json(
        tmp_path / "pipeline.json",
        {
            "families": ["knn", "extra_trees"],
            "strata": "ses",
            "synth": {"n_regions": 30, "noise_sigma": 0.3, "ar_coefficient": 0.3},
        },
    )
    out_dir = tmp_path / "run"
    code = main(
        [
            "pipeline",
            "--seed", "5",
            "--threads", str(threads),
            "--config", str(config),
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    return out_dir


def test_pipeline_on_synthetic_cohort(tmp_path):
    out_dir = _pipeline(tmp_path, threads=1)
    report = load_json(out_dir / "report.json")
    assert report["model"] == "ridge"
    assert report["stratum_key"] == "ses"
    comparison = load_json(out_dir / "comparison.json")
    assert [r["model"] for r in comparison] == ["baseline_mean", "knn", "extra_trees"]
    manifest = load_json(out_dir / "report.manifest.json")
    assert manifest["subcommand"] == "pipeline"
    assert manifest["seed"] == 5
    assert manifest["config"]["synth"]["n_regions"] == 30
    assert (out_dir / "synth" / "truth.json").exists()


def test_pipeline_output_independent_of_threads(tmp_path):
    out_dir = _pipeline(tmp_path, threads=1)
    names = ("report.json", "comparison.json", "outcomes.csv", "report.manifest.json")
    first = {name: (out_dir / name).read_bytes() for name in names}
    _pipeline(tmp_path, threads=8)
    for name in names:
        assert (out_dir / name).read_bytes() == first[name], name
