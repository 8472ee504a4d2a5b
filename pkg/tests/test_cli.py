from __future__ import annotations

import json

import pytest

from cmdtriage.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_triage_clear_exit_zero(capsys, fixtures_dir):
    code, out, _ = run_cli(
        capsys,
        "triage",
        "--config", str(fixtures_dir / "demo" / "config.json"),
        "--goal", "pick the red block and put it in the blue bowl",
        "--scene", str(fixtures_dir / "demo" / "scene.json"),
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["result"]["label"] == "clear"
    assert payload["config"]["triage"]["seed"] == 5
    assert payload["schema_version"] == "1"


def test_triage_ambiguous_exit_ten(capsys, fixtures_dir):
    code, out, _ = run_cli(
        capsys,
        "triage",
        "--config", str(fixtures_dir / "demo" / "config.json"),
        "--goal", "stack all blocks",
        "--scene", str(fixtures_dir / "demo" / "scene.json"),
    )
    assert code == 10
    payload = json.loads(out)
    assert payload["result"]["label"] == "ambiguous"
    assert payload["result"]["question"]


def test_triage_infeasible_exit_eleven(capsys, fixtures_dir):
    code, out, _ = run_cli(
        capsys,
        "triage",
        "--config", str(fixtures_dir / "demo" / "config.json"),
        "--goal", "go for a walk",
        "--scene", str(fixtures_dir / "demo" / "scene.json"),
    )
    assert code == 11
    assert json.loads(out)["result"]["label"] == "infeasible"


def test_triage_missing_scene_exit_one(capsys, fixtures_dir):
    code, _, err = run_cli(
        capsys,
        "triage",
        "--config", str(fixtures_dir / "demo" / "config.json"),
        "--goal", "whatever",
        "--scene", "/nonexistent/scene.json",
    )
    assert code == 1
    assert "/nonexistent/scene.json" in json.loads(err)["message"]


def test_eval_uq_separation_fixture(capsys, tmp_path, fixtures_dir):
    out_path = tmp_path / "report.json"
    code, out, _ = run_cli(
        capsys,
        "eval",
        "--config", str(fixtures_dir / "separation" / "config.json"),
        "--metric", "uq",
        "--out", str(out_path),
    )
    assert code == 0
    payload = json.loads(out)
    aurocs = payload["report"]["auroc"]
    for estimator in (
        "context_sampling",
        "lexical_similarity",
        "predictive_entropy",
        "normalized_entropy",
        "semantic_entropy",
    ):
        assert aurocs[estimator] == 1.0, estimator
    assert json.loads(out_path.read_text()) == payload


def test_eval_cls_cascade_fixture(capsys, tmp_path, fixtures_dir):
    code, out, _ = run_cli(
        capsys,
        "eval",
        "--config", str(fixtures_dir / "cascade" / "config.json"),
        "--metric", "cls",
        "--out", str(tmp_path / "report.json"),
    )
    assert code == 0
    report = json.loads(out)["report"]
    assert report["accuracy3"] == 1.0
    assert report["n"] == {"certain": 6, "ambiguous": 6, "infeasible": 6}


def test_eval_uq_marks_unsupported_without_probs(capsys, tmp_path, fixtures_dir):
    # the cascade rules carry no canned probability tables
    code, out, _ = run_cli(
        capsys,
        "eval",
        "--config", str(fixtures_dir / "cascade" / "config.json"),
        "--metric", "uq",
        "--out", str(tmp_path / "report.json"),
    )
    assert code == 0
    aurocs = json.loads(out)["report"]["auroc"]
    assert aurocs["predictive_entropy"] == "unsupported"
    assert aurocs["normalized_entropy"] == "unsupported"
    assert aurocs["semantic_entropy"] == "unsupported"
    assert aurocs["context_sampling"] == 1.0
    assert aurocs["lexical_similarity"] == 1.0


def test_simulate_batch(capsys, tmp_path, fixtures_dir):
    out_path = tmp_path / "episodes.ndjson"
    code, out, _ = run_cli(
        capsys,
        "simulate",
        "--config", str(fixtures_dir / "sim" / "config.json"),
        "--batch", str(fixtures_dir / "sim" / "batch.json"),
        "--out", str(out_path),
    )
    assert code == 0
    lines = out.strip().splitlines()
    episodes = [json.loads(line) for line in lines[:-1]]
    summary = json.loads(lines[-1])
    assert len(episodes) == 12
    assert summary["summary"]["timing"] == 1.0
    assert summary["summary"]["success_gap"] == 100.0
    written = out_path.read_text().strip().splitlines()
    assert len(written) == 12


def test_simulate_malformed_batch(capsys, tmp_path, fixtures_dir):
    bad = tmp_path / "batch.json"
    bad.write_text("[{}]")
    code, _, err = run_cli(
        capsys,
        "simulate",
        "--config", str(fixtures_dir / "sim" / "config.json"),
        "--batch", str(bad),
    )
    assert code == 1
    assert json.loads(err)["code"] == "error"


def test_calibrate_returns_zero_on_separation(capsys, fixtures_dir):
    code, out, _ = run_cli(
        capsys,
        "calibrate",
        "--config", str(fixtures_dir / "separation" / "config.json"),
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["epsilon"] == 0.0
    assert payload["n"] == 20


def test_bad_config_exit_one(capsys, tmp_path):
    missing = tmp_path / "nope.json"
    code, _, err = run_cli(capsys, "calibrate", "--config", str(missing))
    assert code == 1
    assert "not found" in json.loads(err)["message"]


def test_epsilon_override_flag(capsys, fixtures_dir):
    # a huge epsilon turns the divergent goal clear
    code, out, _ = run_cli(
        capsys,
        "triage",
        "--config", str(fixtures_dir / "demo" / "config.json"),
        "--goal", "stack all blocks",
        "--scene", str(fixtures_dir / "demo" / "scene.json"),
        "--epsilon", "10.0",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["result"]["label"] == "clear"
    assert payload["config"]["triage"]["epsilon"] == 10.0
