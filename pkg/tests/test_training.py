"""
Tests de l'entraînement masqué: Adam masqué, calendrier L2, évaluation,
reprise et audit de K-sparsité.
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest

from cells import MaskedParameterSet, Readout, RecurrentCellSpec, initialize, sequence_loss
from cells.utils import ARCHS
from models.schemas import L2Schedule, SyntheticSpec, TrainConfig
from models.sequences import SequenceDataset
from services import storage
from services.criteria import top_k_mask
from services.datasets import split_dataset, synthetic_task
from services.optimizer import AdamState, adam_step, clip_by_global_norm
from services.training import (
    METRICS_FILE,
    METRIC_COLUMNS,
    _audit,
    data_order,
    evaluate,
    l2_schedule_prune,
    loss_and_grads,
    resume_point,
    schedule_density,
    train,
)
from utils.errors import ContractViolation, NumericFailure


def _task(kind="last_step_class", count=200, seed=0, **kwargs):
    spec = SyntheticSpec(kind=kind, count=count, **kwargs)
    return split_dataset(synthetic_task(spec, seed), 0.2, seed)


def _model(arch="GRU", input_dim=4, hidden=8, classes=2, seed=0):
    spec = RecurrentCellSpec(arch, input_dim, hidden)
    return spec, initialize(spec, "normal", seed), Readout.initialize(hidden, classes, seed)


# =============================================================================
# ADAM MASQUÉ
# =============================================================================

def test_first_adam_step_moves_by_learning_rate():
    """g = 1: m̂ = 1, v̂ = 1, Δθ = −lr / (1 + ε)."""
    config = TrainConfig()
    params = {"theta": np.zeros(4)}
    state = AdamState.zeros_like(params)
    updated, state = adam_step(state, params, {"theta": np.ones(4)}, None, config)
    np.testing.assert_allclose(updated["theta"], -1e-3 / (1 + 1e-8), rtol=1e-15)
    assert state.t == 1


def test_masked_entries_stay_exactly_zero():
    config = TrainConfig(lr=0.1)
    mask = np.array([1, 0, 1, 0], dtype=np.uint8)
    params = {"theta": np.array([0.5, 0.0, -0.5, 0.0])}
    state = AdamState.zeros_like(params)
    for _ in range(5):
        params, state = adam_step(state, params, {"theta": np.full(4, 3.0)}, {"theta": mask}, config)
    assert np.all(params["theta"][mask == 0] == 0.0)
    assert np.all(state.m["theta"][mask == 0] == 0.0)
    assert np.all(state.v["theta"][mask == 0] == 0.0)
    assert np.all(params["theta"][mask == 1] != np.array([0.5, -0.5]))


def test_non_finite_gradient_is_refused():
    params = {"theta": np.zeros(2)}
    with pytest.raises(NumericFailure):
        adam_step(AdamState.zeros_like(params), params, {"theta": np.array([np.nan, 1.0])}, None, TrainConfig())


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same is grads


# =============================================================================
# PERTE ET ÉVALUATION
# =============================================================================

def test_loss_and_grads_shapes():
    train_set, _ = _task()
    spec, params, readout = _model()
    X, y = train_set.X[:8], train_set.y[:8]
    loss, grads, nans = loss_and_grads(spec, params.theta, readout, X, y)
    assert nans == 0
    assert loss == pytest.approx(sequence_loss(spec, params, readout, X, y).item())
    assert grads["theta"].shape == params.w.shape
    assert grads["readout.weight"].shape == readout.weight.shape
    assert grads["readout.bias"].shape == readout.bias.shape


@pytest.mark.parametrize("kind", ["last_step_class", "copy_memory"])
def test_evaluate_loss_matches_sequence_loss(kind):
    _, val_set = _task(kind, count=60, seq_len=8, memory_len=2, num_classes=3)
    spec, params, readout = _model(input_dim=val_set.input_dim, classes=3)
    ev = evaluate(spec, params, readout, val_set, batch_size=5)
    expected = sequence_loss(spec, params, readout, val_set.X, val_set.y, val_set.target_mode).item()
    assert ev["val_loss"] == pytest.approx(expected, rel=1e-10)
    assert 0.0 <= ev["val_error"] <= 100.0


def test_evaluate_refuses_empty_dataset():
    spec, params, readout = _model()
    empty = SequenceDataset(np.zeros((0, 3, 4)), np.zeros(0), 2)
    with pytest.raises(ContractViolation):
        evaluate(spec, params, readout, empty)


# =============================================================================
# CALENDRIER L2
# =============================================================================

def test_schedule_density_boundaries():
    schedule = L2Schedule(densities=[0.5, 0.25], interval=10)
    assert schedule_density(schedule, 0) is None
    assert schedule_density(schedule, 5) is None
    assert schedule_density(schedule, 10) == 0.5
    assert schedule_density(schedule, 20) == 0.25
    assert schedule_density(schedule, 30) is None


def test_schedule_must_be_strictly_decreasing():
    with pytest.raises(ValueError):
        L2Schedule(densities=[0.5, 0.5])


def test_l2_prune_keeps_largest_and_never_revives():
    spec = RecurrentCellSpec("RNN", 2, 3)
    total = spec.layout.total
    w = np.arange(1.0, total + 1)
    c = np.ones(total, dtype=np.uint8)
    c[-1] = 0
    params = MaskedParameterSet(spec, w, c).apply_mask()
    schedule = L2Schedule(densities=[0.5, 0.2], interval=10)

    mask = l2_schedule_prune(params, schedule, 10)
    keep = int(np.ceil(0.5 * total))
    assert int(mask.sum()) == keep
    assert mask[-1] == 0
    # les plus grandes magnitudes encore retenues
    assert np.all(mask[total - 1 - keep:total - 1] == 1)

    second = l2_schedule_prune(params.with_mask(mask), schedule, 20)
    assert np.all(second <= mask)
    with pytest.raises(ContractViolation):
        l2_schedule_prune(params, schedule, 15)


def test_training_with_l2_schedule_reaches_final_density(tmp_path):
    train_set, val_set = _task(count=100)
    spec, params, readout = _model(hidden=4)
    config = TrainConfig(batch_size=16, epochs=0, max_steps=12, eval_every=4, lr=0.01,
                         l2_schedule=L2Schedule(densities=[0.5, 0.25], interval=5))
    result = train(spec, params, readout, train_set, val_set, config, seed=0)
    assert result.params.count == int(np.ceil(0.25 * spec.layout.total))
    densities = [row.density for row in result.history]
    assert densities == sorted(densities, reverse=True)
    assert np.all(result.params.w[result.params.c == 0] == 0)


# =============================================================================
# BOUCLE D'ENTRAÎNEMENT
# =============================================================================

def test_data_order_is_deterministic_per_epoch():
    np.testing.assert_array_equal(data_order(3, 0, 10), data_order(3, 0, 10))
    assert not np.array_equal(data_order(3, 0, 50), data_order(3, 1, 50))
    assert sorted(data_order(3, 2, 10)) == list(range(10))


def test_zero_step_run_evaluates_and_checkpoints(tmp_path):
    train_set, val_set = _task()
    spec, params, readout = _model()
    config = TrainConfig(epochs=0)
    result = train(spec, params, readout, train_set, val_set, config, seed=0, run_dir=str(tmp_path))
    assert result.step == 0
    assert len(result.history) == 1
    assert result.history[0].train_loss is None
    assert len(result.checkpoints) == 1
    np.testing.assert_array_equal(result.params.w, params.w)


def test_sparsity_is_preserved_during_training(tmp_path):
    train_set, val_set = _task()
    spec, params, readout = _model()
    mask = top_k_mask(np.random.default_rng(0).uniform(size=spec.layout.total), 40)
    pruned = params.with_mask(mask)
    config = TrainConfig(batch_size=16, epochs=1, eval_every=3, lr=0.01)
    result = train(spec, pruned, readout, train_set, val_set, config, seed=1, run_dir=str(tmp_path))
    assert result.params.count == 40
    assert np.all(result.params.w[mask == 0] == 0.0)
    assert all(row.retained == 40 for row in result.history)

    metrics = pd.read_csv(tmp_path / METRICS_FILE)
    assert list(metrics["step"]) == [row.step for row in result.history]
    assert metrics["step"].iloc[-1] == result.step == 10


def test_metrics_rows_carry_config_hash_and_seed(tmp_path):
    train_set, val_set = _task()
    spec, params, readout = _model()
    config = TrainConfig(batch_size=32, epochs=0, max_steps=4, eval_every=2)
    result = train(spec, params, readout, train_set, val_set, config, seed=11, run_dir=str(tmp_path),
                   config_hash="c0ffee12", root_seed=3)
    metrics = pd.read_csv(tmp_path / METRICS_FILE, dtype={"config_hash": str})
    assert list(metrics.columns) == METRIC_COLUMNS
    assert {"config_hash", "seed"} <= set(metrics.columns)
    assert set(metrics["config_hash"]) == {"c0ffee12"}
    assert set(metrics["seed"]) == {3}
    assert all(row.config_hash == "c0ffee12" and row.seed == 3 for row in result.history)


@pytest.mark.parametrize("arch", ARCHS)
def test_loss_decreases_over_first_hundred_steps(arch):
    """Adam au taux par défaut (1e-3): la perte moyenne des pas 91-100 est sous celle des pas 1-10."""
    train_set, val_set = _task(count=400)
    spec, params, readout = _model(arch)
    config = TrainConfig(batch_size=64, epochs=0, max_steps=100, eval_every=10)
    result = train(spec, params, readout, train_set, val_set, config, seed=0)
    assert config.lr == 1e-3
    assert [row.step for row in result.history][:2] == [0, 10]
    assert result.history[-1].train_loss < result.history[1].train_loss


def test_audit_detects_leaked_weights():
    spec = RecurrentCellSpec("RNN", 2, 2)
    c = np.ones(spec.layout.total, dtype=np.uint8)
    c[0] = 0
    params = MaskedParameterSet(spec, np.ones(spec.layout.total), c)
    with pytest.raises(NumericFailure):
        _audit(params, params.count, step=3)
    params.apply_mask()
    _audit(params, params.count, step=3)
    with pytest.raises(NumericFailure):
        _audit(params, params.count + 1, step=3)


def test_nan_loss_stops_training():
    train_set, val_set = _task()
    train_set.X[:] = np.nan
    spec, params, readout = _model()
    with pytest.raises(NumericFailure):
        train(spec, params, readout, train_set, val_set, TrainConfig(epochs=1), seed=0)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    """Reprendre au pas 6 donne les mêmes paramètres qu'un run continu."""
    train_set, val_set = _task()
    spec, params, readout = _model()
    config = TrainConfig(batch_size=32, epochs=0, max_steps=12, eval_every=4, checkpoint_every=6, lr=0.01)
    full = train(spec, params, readout, train_set, val_set, config, seed=5, run_dir=str(tmp_path / "a"))

    start = resume_point(storage.checkpoint_path(str(tmp_path / "a"), 6), spec)
    assert start.step == 6
    resumed = train(spec, params, readout, train_set, val_set, config, seed=5, resume=start)
    assert resumed.step == 12
    np.testing.assert_array_equal(resumed.params.w, full.params.w)
    np.testing.assert_array_equal(resumed.readout.weight, full.readout.weight)
    assert resumed.history[-1].train_loss == full.history[-1].train_loss


@pytest.mark.slow
def test_synthetic_task_is_learned():
    """GRU N=8 sur la tâche synthétique à deux classes, taux par défaut: erreur < 5 %."""
    train_set, val_set = _task(count=1024)
    spec, params, readout = _model(seed=0)
    config = TrainConfig(batch_size=64, epochs=0, max_steps=1500, eval_every=250)
    result = train(spec, params, readout, train_set, val_set, config, seed=0)
    assert result.history[-1].val_error < 5.0
