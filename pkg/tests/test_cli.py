"""
Tests de bout en bout de la CLI (tâche synthétique, petite échelle).
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json

import pandas as pd
import pytest

import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SYNTHETIC = os.path.join(ROOT, "config", "synthetic.yaml")
EXPERIMENT = os.path.join(ROOT, "config", "experiment.yaml")


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RNNPRUNE_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("RNNPRUNE_DATA_ROOT", raising=False)


def _run(capsys, *argv):
    code = main.main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == main.EXIT_OK else None)


def test_invalid_config_exits_with_code_2(tmp_path, capsys):
    code, _ = _run(capsys, "prune", "--config", SYNTHETIC, "--out", str(tmp_path), "--set", "cell.arch=Foo")
    assert code == main.EXIT_CONFIG
    code, _ = _run(capsys, "prune", "--config", str(tmp_path / "absent.yaml"))
    assert code == main.EXIT_CONFIG


def test_missing_mnist_root_exits_with_code_3(tmp_path, capsys):
    code, _ = _run(capsys, "prune", "--config", EXPERIMENT, "--out", str(tmp_path),
                   "--set", f"dataset.root={tmp_path / 'absent'}")
    assert code == main.EXIT_DATA


def test_prune_writes_k_sparse_mask_reproducibly(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, sidecar = _run(capsys, "prune", "--config", SYNTHETIC, "--out", out, "--seed", "3")
    assert code == main.EXIT_OK
    total = 3 * (4 * 8 + 8 * 8 + 8)
    assert sidecar["total"] == total
    assert sidecar["k"] == total // 2
    assert sidecar["seed"] == 3
    assert sidecar["connectivity"]["retained"] == total // 2
    assert sidecar["chi"] > 0

    with open(sidecar["mask_path"], "rb") as f:
        first = f.read()
    code, again = _run(capsys, "prune", "--config", SYNTHETIC, "--out", out, "--seed", "3")
    assert code == main.EXIT_OK
    with open(again["mask_path"], "rb") as f:
        assert f.read() == first


def test_train_zero_steps_and_masked_training(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, result = _run(capsys, "train", "--config", SYNTHETIC, "--out", out, "--set", "train.max_steps=0")
    assert code == main.EXIT_OK
    assert result["step"] == 0
    assert result["density"] == 1.0
    assert result["dataset"]["kind"] == "synthetic"

    code, sidecar = _run(capsys, "prune", "--config", SYNTHETIC, "--out", out, "--set", "train.max_steps=6")
    code, result = _run(capsys, "train", "--config", SYNTHETIC, "--out", out, "--set", "train.max_steps=6",
                        "--mask", sidecar["mask_path"])
    assert code == main.EXIT_OK
    assert result["step"] == 6
    assert result["retained"] == sidecar["k"]
    metrics = pd.read_csv(os.path.join(out, result["run_id"], "metrics.csv"))
    assert list(metrics["step"]) == [0, 6]
    assert set(metrics["retained"]) == {sidecar["k"]}


def test_train_resume_continues_step_numbering(tmp_path, capsys):
    out = str(tmp_path / "runs")
    args = ["--config", SYNTHETIC, "--out", out, "--set", "train.max_steps=8", "--set", "train.checkpoint_every=4"]
    code, first = _run(capsys, "train", *args)
    assert code == main.EXIT_OK
    code, resumed = _run(capsys, "train", *args, "--resume")
    assert code == main.EXIT_OK
    assert resumed["step"] == 8
    assert resumed["run_id"] == first["run_id"]


def test_analyze_writes_reports(tmp_path, capsys):
    out = str(tmp_path / "runs")
    _, sidecar = _run(capsys, "prune", "--config", SYNTHETIC, "--out", out)
    code, report = _run(capsys, "analyze", "--config", SYNTHETIC, "--out", out, "--mask", sidecar["mask_path"])
    assert code == main.EXIT_OK
    assert report["connectivity"]["retained"] == sidecar["k"]
    assert report["spectrum"]["steps"] == [7, 6, 5, 4]
    assert report["spectrum"]["hidden_dim"] == 8
    for path in report["paths"].values():
        assert os.path.exists(path)
    cmap = pd.read_csv(report["paths"]["connection_map"], dtype={"config_hash": str})
    assert len(cmap) == sidecar["k"]
    assert set(cmap["config_hash"]) == {sidecar["config_hash"]}
    assert set(cmap["seed"]) == {sidecar["seed"]}
    spectrum = pd.read_csv(report["paths"]["csv"], dtype={"config_hash": str})
    assert set(spectrum["config_hash"]) == {sidecar["config_hash"]}

    code, report = _run(capsys, "analyze", "--config", SYNTHETIC, "--out", out, "--mask", sidecar["mask_path"],
                        "--exclude-bias")
    assert code == main.EXIT_OK
    cmap = pd.read_csv(report["paths"]["connection_map"])
    assert len(cmap) == sidecar["k"] - sidecar["connectivity"]["bias"]


def test_keep_above_parameter_count_is_a_config_error(tmp_path, capsys):
    code, _ = _run(capsys, "prune", "--config", SYNTHETIC, "--out", str(tmp_path), "--set", "keep=100000")
    assert code == main.EXIT_CONFIG


def test_compare_builds_summary_table(tmp_path, capsys):
    doc = tmp_path / "compare.yaml"
    doc.write_text(
        "base:\n"
        "  name: cmp\n"
        "  cell: {arch: GRU, input_dim: 4, hidden_dim: 4}\n"
        "  criterion: {horizon: 2, batch_size: 16, sample_count: 4}\n"
        "  sparsity: 0.5\n"
        "  train: {epochs: 0, max_steps: 2, batch_size: 16, eval_every: 2}\n"
        "  dataset:\n"
        "    kind: synthetic\n"
        "    synthetic: {count: 64, seq_len: 4, input_dim: 4}\n"
        "criteria: [random, magnitude]\n"
        "seeds: [0, 1]\n",
        encoding="utf-8",
    )
    code, result = _run(capsys, "compare", "--config", str(doc), "--out", str(tmp_path / "runs"))
    assert code == main.EXIT_OK
    rows = {row["key"]: row for row in result["rows"]}
    assert set(rows) == {"random", "magnitude"}
    assert all(row["runs"] == 2 and row["missing"] == 0 for row in rows.values())
    assert "±" in rows["random"]["display"]
    assert os.path.exists(result["paths"]["summary_csv"])
    assert all(row["seeds"] == "0;1" and row["config_hash"] == result["config_hash"] for row in rows.values())
    runs = pd.read_csv(result["paths"]["runs"], dtype={"config_hash": str})
    assert runs["config_hash"].notna().all()
    assert runs["config_hash"].nunique() == 4
    assert runs["empty_roles"].notna().all()

    # second passage: les runs existants sont relus
    code, again = _run(capsys, "compare", "--config", str(doc), "--out", str(tmp_path / "runs"))
    assert again["rows"] == result["rows"]
