"""
Tests de la comparaison: agrégation moyenne ± écart-type, cases manquantes,
provenance des tableaux, surcharges par case et matrice de référence.
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import math

import pandas as pd
import pytest

import config
from models.schemas import CompareCell, CompareConfig, ExperimentConfig
from scripts.normalization_ablation import ordering_holds
from services.experiment_service import ExperimentService, cell_config, run_compare
from services.report import RUN_COLUMNS, SUMMARY_COLUMNS, summarize_runs, write_summary
from utils.errors import ConfigError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
COMPARE = os.path.join(ROOT, "config", "compare.yaml")
SYNTHETIC = os.path.join(ROOT, "config", "synthetic.yaml")


def _run(key, seed, val_error, status="ok", criterion=None):
    row = {"key": key, "criterion": criterion or key, "seed": seed, "run_id": f"{key}-s{seed}",
           "config_hash": f"{key}{seed:02d}abcdef", "status": status, "val_error": val_error}
    if status != "ok":
        row.update(val_error=None, error="divergence")
    return row


# =============================================================================
# AGRÉGATION
# =============================================================================

def test_summary_mean_and_population_std_by_hand():
    runs = [_run("jacobian", 0, 10.0), _run("jacobian", 1, 20.0), _run("jacobian", 2, 30.0)]
    summary = summarize_runs(runs, "f00d")
    row = summary.iloc[0]
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert row["mean"] == pytest.approx(20.0)
    assert row["std"] == pytest.approx(math.sqrt(200.0 / 3.0))
    assert row["display"] == "20.00±8.16"
    assert row["runs"] == 3 and row["missing"] == 0
    assert row["seeds"] == "0;1;2"
    assert row["config_hash"] == "f00d"


def test_identical_runs_have_zero_std():
    summary = summarize_runs([_run("snip", s, 12.5) for s in range(3)])
    assert summary.iloc[0]["std"] == 0.0
    assert summary.iloc[0]["display"] == "12.50±0.00"


def test_partial_table_counts_missing_cells():
    runs = [
        _run("jacobian", 0, 10.0), _run("jacobian", 1, 14.0), _run("jacobian", 2, None, status="failed"),
        _run("foresight", 0, None, status="failed"), _run("foresight", 1, None, status="failed"),
        _run("random", 0, 80.0),
    ]
    summary = summarize_runs(runs).set_index("key")
    assert list(summary.index) == ["jacobian", "foresight", "random"]
    assert summary.loc["jacobian", "runs"] == 2
    assert summary.loc["jacobian", "missing"] == 1
    assert summary.loc["jacobian", "mean"] == pytest.approx(12.0)
    assert summary.loc["jacobian", "std"] == pytest.approx(2.0)
    assert summary.loc["foresight", "runs"] == 0
    assert summary.loc["foresight", "missing"] == 2
    assert summary.loc["foresight", "display"] == "n/a"
    assert summary.loc["random", "display"] == "80.00±0.00"


def test_written_tables_carry_provenance(tmp_path):
    runs = [_run("jacobian", 0, 10.0), _run("jacobian", 1, 11.0), _run("snip", 0, None, status="failed")]
    paths = write_summary(str(tmp_path), runs, {"config_hash": "c0ffee00", "cells": 3})

    table = pd.read_csv(paths["runs"], dtype={"config_hash": str})
    assert list(table.columns) == RUN_COLUMNS
    assert list(table["config_hash"]) == [r["config_hash"] for r in runs]
    assert list(table["seed"]) == [0, 1, 0]

    summary = pd.read_csv(paths["summary_csv"], dtype={"config_hash": str, "seeds": str})
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert set(summary["config_hash"]) == {"c0ffee00"}
    assert list(summary["seeds"]) == ["0;1", "0"]

    payload = json.loads(open(paths["summary_json"], encoding="utf-8").read())
    assert payload["config_hash"] == "c0ffee00"
    assert payload["rows"][0]["seeds"] == "0;1"


# =============================================================================
# MATRICE
# =============================================================================

def test_cell_config_applies_overrides():
    base = config.load_experiment(SYNTHETIC)
    cell = CompareCell(label="snip-glorot", criterion="snip", seed=2, overrides={"init.scheme": "glorot"})
    cfg = cell_config(base, cell)
    assert cfg.criterion.name == "snip"
    assert cfg.seed == 2
    assert cfg.init.scheme == "glorot"
    assert cfg.name == f"{base.name}-snip-glorot-s2"
    assert base.init.scheme == "normal"


def test_reference_matrix_has_glorot_cells_for_loss_criteria():
    cfg = config.load_compare(COMPARE)
    cells = cfg.expand()
    for criterion in ("snip", "foresight"):
        glorot = [c for c in cells if c.key == f"{criterion}-glorot"]
        assert sorted(c.seed for c in glorot) == [0, 1, 2]
        assert all(c.criterion == criterion for c in glorot)
        assert all(cell_config(cfg.base, c).init.scheme == "glorot" for c in glorot)
    keys = {c.key for c in cells}
    assert {"jacobian", "snip", "foresight", "random", "jacobian-unnormalized", "snip-normalized"} <= keys


def test_empty_matrix_is_a_config_error():
    with pytest.raises(ConfigError):
        run_compare(CompareConfig(base=ExperimentConfig(), criteria=[], cells=[]))


def test_keep_above_parameter_count_is_a_config_error():
    cfg = config.load_experiment(SYNTHETIC, ["keep=100000"])
    with pytest.raises(ConfigError) as excinfo:
        ExperimentService(cfg).target_k()
    assert any("keep" in problem for problem in excinfo.value.problems)


# =============================================================================
# ABLATION DE LA NORMALISATION
# =============================================================================

def _ablation_runs(norm_empty_roles):
    rows = []
    for seed in range(2):
        rows.append({"key": "jacobian-unnormalized", "seed": seed, "status": "ok",
                     "max_gate_share": 0.95, "val_error": 80.0, "empty_roles": 6})
        rows.append({"key": "jacobian-normalized", "seed": seed, "status": "ok",
                     "max_gate_share": 0.4, "val_error": 5.0, "empty_roles": norm_empty_roles})
    return pd.DataFrame(rows)


def test_ordering_requires_every_gate_role_in_normalized_masks():
    assert ordering_holds(_ablation_runs(0))
    assert not ordering_holds(_ablation_runs(2))
    assert not ordering_holds(_ablation_runs(None))


def test_ordering_needs_both_variants():
    runs = _ablation_runs(0)
    assert not ordering_holds(runs[runs["key"] == "jacobian-normalized"])
