"""
Tests des cellules récurrentes: disposition des paramètres, pas de cellule
comparés à des implémentations numpy directes, Jacobienne temporelle exacte.
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cells import (
    HiddenState,
    MaskedParameterSet,
    Readout,
    RecurrentCellSpec,
    initialize,
    parameter_count,
    sequence_loss,
    step,
    temporal_jacobian,
    unroll,
)
from cells.utils import ARCHS, probe_directions
from diffcore.oracle import jacobian_rev
from diffcore.tensor import as_tensor
from utils.errors import ContractViolation

D, N = 3, 5


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _spec_and_params(arch, seed=0, std=0.5):
    spec = RecurrentCellSpec(arch, D, N)
    return spec, initialize(spec, "normal", seed, std=std)


# =============================================================================
# DISPOSITION
# =============================================================================

def test_parameter_counts():
    """Comptes de référence pour D=28, N=400."""
    cases = [
        ("RNN", 171_600),
        ("GRU", 514_800),
        ("LSTM", 686_400),
        ("PeepholeLSTM", 687_600),
    ]
    for arch, expected in cases:
        assert parameter_count(RecurrentCellSpec(arch, 28, 400)) == expected, arch


@settings(max_examples=25, deadline=None)
@given(arch=st.sampled_from(ARCHS), d=st.integers(1, 6), n=st.integers(1, 6))
def test_layout_partitions_flat_vector(arch, d, n):
    """Les blocs sont contigus, disjoints et couvrent tout le vecteur."""
    layout = RecurrentCellSpec(arch, d, n).layout
    offset = 0
    for block in layout.blocks:
        assert block.offset == offset
        offset = block.stop
    assert offset == layout.total
    roles = sum(int(layout.role_mask(r).sum()) for r in ("input", "recurrent", "bias"))
    assert roles == layout.total
    assert set(np.unique(layout.gate_ids)) == set(range(len(layout.gates)))


def test_layout_order_per_gate():
    layout = RecurrentCellSpec("PeepholeLSTM", D, N).layout
    names = [b.name for b in layout.blocks[:4]]
    assert names == ["input.input", "input.recurrent", "input.bias", "input.peephole"]
    assert layout.block("input.peephole").role == "recurrent"
    assert "cell.peephole" not in [b.name for b in layout.blocks]


def test_split_then_flatten_is_identity():
    spec, params = _spec_and_params("LSTM")
    blocks = spec.layout.split(params.w)
    assert blocks["forget.recurrent"].shape == (N, N)
    np.testing.assert_array_equal(spec.layout.flatten(blocks), params.w)


def test_identity_activation_only_for_rnn():
    RecurrentCellSpec("RNN", 2, 2, activation="identity")
    with pytest.raises(ContractViolation):
        RecurrentCellSpec("GRU", 2, 2, activation="identity")


def test_unknown_architecture_is_refused():
    with pytest.raises(ContractViolation):
        RecurrentCellSpec("Transformer", 2, 2)


# =============================================================================
# PARAMÈTRES MASQUÉS ET INITIALISATION
# =============================================================================

def test_masked_parameter_set_projection():
    spec = RecurrentCellSpec("RNN", 2, 2)
    w = np.arange(1.0, spec.layout.total + 1)
    c = np.zeros(spec.layout.total, dtype=np.uint8)
    c[::2] = 1
    pset = MaskedParameterSet(spec, w, c)
    assert pset.count == int(c.sum())
    np.testing.assert_array_equal(pset.theta, w * c)
    pset.apply_mask()
    assert np.all(pset.w[c == 0] == 0)


def test_mask_must_be_binary():
    spec = RecurrentCellSpec("RNN", 2, 2)
    with pytest.raises(ContractViolation):
        MaskedParameterSet(spec, np.zeros(spec.layout.total), np.full(spec.layout.total, 2))


def test_initialize_is_deterministic_per_seed():
    spec = RecurrentCellSpec("GRU", D, N)
    a = initialize(spec, "normal", seed=7)
    b = initialize(spec, "normal", seed=7)
    c = initialize(spec, "normal", seed=8)
    np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(a.w, c.w)


def test_initialize_normal_uses_std():
    spec = RecurrentCellSpec("GRU", 28, 100)
    w = initialize(spec, "normal", seed=0, std=0.1).w
    assert abs(w.std() - 0.1) < 0.002
    assert abs(w.mean()) < 0.002


def test_glorot_bounds_and_zero_biases():
    spec = RecurrentCellSpec("LSTM", 4, 6)
    pset = initialize(spec, "glorot", seed=0)
    for block in spec.layout.blocks:
        values = pset.w[block.offset:block.stop]
        if len(block.shape) == 2:
            bound = np.sqrt(6.0 / sum(block.shape))
            assert np.all(np.abs(values) <= bound)
        else:
            assert np.all(values == 0)


def test_uniform_initialization_range():
    w = initialize(RecurrentCellSpec("RNN", 3, 4), "uniform", seed=0).w
    assert w.min() >= 0.0 and w.max() <= 0.1


def test_readout_initialization():
    readout = Readout.initialize(8, 3, seed=0)
    assert readout.weight.shape == (8, 3)
    assert np.all(readout.bias == 0)
    assert np.all(np.abs(readout.weight) <= np.sqrt(6.0 / 11))


# =============================================================================
# PAS DE CELLULE
# =============================================================================

def test_rnn_step_matches_numpy():
    spec, params = _spec_and_params("RNN")
    b = spec.layout.split(params.w)
    rng = np.random.default_rng(0)
    x, h = rng.normal(size=D), rng.normal(size=N)
    out = step(spec, params, x, HiddenState(h)).h.data
    expected = np.tanh(x @ b["candidate.input"] + h @ b["candidate.recurrent"] + b["candidate.bias"])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_gru_step_matches_numpy():
    spec, params = _spec_and_params("GRU")
    b = spec.layout.split(params.w)
    rng = np.random.default_rng(1)
    x, h = rng.normal(size=(2, D)), rng.normal(size=(2, N))

    def pre(gate, hh):
        return x @ b[f"{gate}.input"] + hh @ b[f"{gate}.recurrent"] + b[f"{gate}.bias"]

    z = _sigmoid(pre("update", h))
    r = _sigmoid(pre("reset", h))
    cand = np.tanh(pre("candidate", r * h))
    expected = (1 - z) * h + z * cand
    np.testing.assert_allclose(step(spec, params, x, HiddenState(h)).h.data, expected, atol=1e-12)


def test_lstm_and_peephole_steps_match_numpy():
    rng = np.random.default_rng(2)
    x, h, c = rng.normal(size=D), rng.normal(size=N), rng.normal(size=N)
    for arch in ("LSTM", "PeepholeLSTM"):
        spec, params = _spec_and_params(arch)
        b = spec.layout.split(params.w)

        def pre(gate):
            return x @ b[f"{gate}.input"] + h @ b[f"{gate}.recurrent"] + b[f"{gate}.bias"]

        peep = (lambda g: b[f"{g}.peephole"]) if arch == "PeepholeLSTM" else (lambda g: np.zeros(N))
        i = _sigmoid(pre("input") + peep("input") * c)
        f = _sigmoid(pre("forget") + peep("forget") * c)
        g = np.tanh(pre("cell"))
        c_new = f * c + i * g
        o = _sigmoid(pre("output") + peep("output") * c_new)
        out = step(spec, params, x, HiddenState(h, c))
        np.testing.assert_allclose(out.cell.data, c_new, atol=1e-12)
        np.testing.assert_allclose(out.h.data, o * np.tanh(c_new), atol=1e-12)


def test_lstm_requires_cell_state():
    spec, params = _spec_and_params("LSTM")
    with pytest.raises(ContractViolation):
        step(spec, params, np.zeros(D), HiddenState(np.zeros(N)))


def test_input_dimension_is_checked():
    spec, params = _spec_and_params("GRU")
    with pytest.raises(ContractViolation):
        step(spec, params, np.zeros(D + 1))


# =============================================================================
# DÉROULEMENT
# =============================================================================

def test_unroll_single_sequence_matches_batch():
    spec, params = _spec_and_params("GRU")
    X = np.random.default_rng(3).normal(size=(4, 6, D))
    batch = unroll(spec, params, X).states
    single = unroll(spec, params, X[2]).states
    assert len(single) == 6
    np.testing.assert_allclose(single[-1].h.data, batch[-1].h.data[2], atol=1e-12)


def test_unroll_rejects_empty_sequence():
    spec, params = _spec_and_params("RNN")
    with pytest.raises(ContractViolation):
        unroll(spec, params, np.zeros((2, 0, D)))


def test_sequence_loss_all_mode_weights_target_steps():
    """En mode all, la perte est la moyenne des NLL sur les pas ciblés."""
    spec, params = _spec_and_params("RNN")
    readout = Readout.initialize(N, 3, seed=0)
    X = np.random.default_rng(4).normal(size=(2, 4, D))
    y = np.array([[-1, 0, -1, 2], [-1, -1, 1, 1]])
    loss = sequence_loss(spec, params, readout, X, y, "all").item()

    outputs = unroll(spec, params, X, readout, mode="all").outputs
    nll = []
    for b, t in zip(*np.nonzero(y >= 0)):
        z = outputs[t].data[b]
        nll.append(np.log(np.exp(z).sum()) - z[y[b, t]])
    assert loss == pytest.approx(np.mean(nll))


# =============================================================================
# JACOBIENNE TEMPORELLE
# =============================================================================

@pytest.mark.parametrize("arch", ARCHS)
def test_temporal_jacobian_matches_reverse_oracle(arch):
    spec, params = _spec_and_params(arch, seed=5)
    rng = np.random.default_rng(6)
    x, h = rng.normal(size=D), rng.normal(size=N)
    c = rng.normal(size=N) if spec.cell.HAS_CELL_STATE else None
    J = temporal_jacobian(spec, params, x, HiddenState(h, c))
    cell = as_tensor(c) if c is not None else None
    expected = jacobian_rev(lambda t: step(spec, params, x, HiddenState(t, cell)).h, h)
    assert J.shape == (N, N)
    np.testing.assert_allclose(J, expected, atol=1e-12)


def test_temporal_jacobian_batched_matches_single():
    spec, params = _spec_and_params("GRU", seed=9)
    rng = np.random.default_rng(10)
    x, h = rng.normal(size=(3, D)), rng.normal(size=(3, N))
    J = temporal_jacobian(spec, params, x, HiddenState(h))
    assert J.shape == (3, N, N)
    single = temporal_jacobian(spec, params, x[1], HiddenState(h[1]))
    np.testing.assert_allclose(J[1], single, atol=1e-12)


def test_linear_rnn_jacobian_is_recurrent_matrix():
    """h' = x W + h U + b: J[i, j] = U[j, i]."""
    spec = RecurrentCellSpec("RNN", D, N, activation="identity")
    params = initialize(spec, "normal", seed=11, std=1.0)
    U = spec.layout.split(params.w)["candidate.recurrent"]
    J = temporal_jacobian(spec, params, np.ones(D), HiddenState(np.zeros(N)))
    np.testing.assert_allclose(J, U.T, atol=1e-14)


def test_probe_directions_shapes():
    assert probe_directions(4, (2,), "frobenius").shape == (4, 2, 4)
    assert probe_directions(4, (2,), "ones_vector").shape == (1, 2, 4)
    with pytest.raises(ContractViolation):
        probe_directions(4, (), "random")
