from __future__ import annotations

import json

import pytest
import yaml

from codesumeval.config import load_config
from codesumeval.dataset import QualityDimension, human_scores, ingest_dataset
from codesumeval.reports import read_report_records
from codesumeval.scores import MetricScoreSet

from conftest import FIXTURES, run_cli
from oracles import spearman as spearman_oracle


def test_config_errors_are_all_listed(workspace):
    raw = yaml.safe_load(workspace.read_text())
    del raw["seed"]
    raw["colour"] = "blue"
    raw["metrics"].append({"id": "x", "kind": "magic"})
    raw["stats"]["alpha"] = 2
    workspace.write_text(yaml.safe_dump(raw))
    result = run_cli("correlate", "-c", workspace)
    assert result.exit_code == 2
    lines = [line for line in result.stderr.splitlines() if line.startswith("config error:")]
    text = "\n".join(lines)
    assert len(lines) >= 4
    for field in ("seed", "colour", "metrics", "alpha"):
        assert field in text


def test_missing_key_named_by_score(workspace, monkeypatch):
    monkeypatch.delenv("CODESUMEVAL_TEST_KEY", raising=False)
    raw = yaml.safe_load(workspace.read_text())
    raw["providers"]["judge"] = {"kind": "llm", "adapter_id": "anthropic", "model_name": "claude-3-opus-20240229",
                                 "auth_env": "CODESUMEVAL_TEST_KEY"}
    workspace.write_text(yaml.safe_dump(raw))
    result = run_cli("score", "-c", workspace, "-m", "ask-claude")
    assert result.exit_code == 2
    assert "CODESUMEVAL_TEST_KEY" in result.stderr


def test_offline_refuses_networked_provider(workspace):
    raw = yaml.safe_load(workspace.read_text())
    raw["providers"]["judge"] = {"kind": "llm", "adapter_id": "anthropic", "model_name": "m"}
    workspace.write_text(yaml.safe_dump(raw))
    result = run_cli("score", "-c", workspace, "-m", "ask-claude", "--offline")
    assert result.exit_code == 2
    assert "--offline" in result.stderr


def test_compare_identical_metric_files_gives_p_one(workspace):
    raw = yaml.safe_load(workspace.read_text())
    raw["metrics"] = [{"id": "side", "kind": "external", "path": "side.csv"},
                      {"id": "side-copy", "kind": "external", "path": "side.csv"}]
    workspace.write_text(yaml.safe_dump(raw))
    assert run_cli("score", "-c", workspace, "--offline").exit_code == 0
    result = run_cli("compare", "-c", workspace, "--offline")
    assert result.exit_code == 0, result.output
    _, rows = read_report_records(workspace.parent / "out" / "reports" / "compare.jsonl")
    assert len(rows) == 1
    assert rows[0]["p_value"] == 1.0 and rows[0]["observed_delta_rho"] == 0


def test_correlate_equals_oracle_on_fixture_scores(workspace):
    assert run_cli("score", "-c", workspace, "--offline", "-m", "rouge-l", "-m", "side").exit_code == 0
    assert run_cli("correlate", "-c", workspace, "-m", "rouge-l", "-m", "side").exit_code == 0
    out = workspace.parent / "out"
    ds = ingest_dataset(workspace.parent / "dataset.jsonl", "harmonized-v1")
    for row in read_report_records(out / "reports" / "correlation.jsonl")[1]:
        scores = MetricScoreSet.read(out / "scores" / f"{row['metric_id']}.jsonl").scores
        human = human_scores(ds, QualityDimension(row["dimension"]))
        ids = sorted(set(human) & set(scores))
        expected = spearman_oracle([human[i] for i in ids], [scores[i] for i in ids])
        assert row["rho"] == pytest.approx(expected, abs=1e-9)


def test_reports_embed_config_hash_and_seed(workspace):
    run_cli("score", "-c", workspace, "--offline", "-m", "bleu-a")
    result = run_cli("correlate", "-c", workspace, "-m", "bleu-a", "--seed", "7")
    config = load_config(workspace, {"seed": 7})
    assert f"config_hash: {config.config_hash}  seed: 7" in result.output
    header = json.loads((workspace.parent / "out" / "reports" / "correlation.jsonl").read_text().splitlines()[0])
    assert header["config_hash"] == config.config_hash and header["seed"] == 7
    provenance = json.loads((workspace.parent / "out" / "provenance.json").read_text())
    assert provenance["config"]["dataset"]["path"] == "dataset.jsonl"


def test_seed_changes_config_hash(workspace):
    assert load_config(workspace).config_hash != load_config(workspace, {"seed": 1}).config_hash


def test_correlate_before_score_is_an_error(workspace):
    result = run_cli("correlate", "-c", workspace)
    assert result.exit_code == 1 and "run the score command first" in result.stderr


def test_ingest_command(tmp_path):
    out = tmp_path / "h.jsonl"
    result = run_cli("ingest", FIXTURES / "source" / "haque_fixture.csv", "--format", "haque2022", "-o", out)
    assert result.exit_code == 0
    assert "24 records written" in result.output
    assert out.read_bytes() == (FIXTURES / "dataset.jsonl").read_bytes()


def test_analyze_and_cost(workspace):
    assert run_cli("score", "-c", workspace, "--offline").exit_code == 0
    result = run_cli("analyze", "-c", workspace)
    assert result.exit_code == 0
    reports = workspace.parent / "out" / "reports"
    for name in ("length_bias", "rankings", "stratified"):
        assert (reports / f"{name}.txt").exists()
    cost = run_cli("cost", "-c", workspace)
    assert cost.exit_code == 0
    rows = {r["metric_id"]: r for r in read_report_records(reports / "cost.jsonl")[1]}
    assert rows["ask-claude"]["queries"] == 24
    assert rows["ask-claude"]["total_usd"] == "0.576"
