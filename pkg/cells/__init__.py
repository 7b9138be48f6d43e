"""
Cellules récurrentes.

Chaque module décrit une architecture:
- rnn: RNN simple (tanh ou identité)
- lstm: LSTM standard
- peephole_lstm: LSTM à peepholes
- gru: GRU

Chaque module expose GATES, PEEPHOLE_GATES, HAS_CELL_STATE et step().
La disposition des paramètres, l'initialisation, le déroulement et la
Jacobienne temporelle sont communs (cells.utils).

Usage:
    from cells import RecurrentCellSpec, initialize, unroll

    spec = RecurrentCellSpec("GRU", input_dim=28, hidden_dim=100)
    params = initialize(spec, "normal", seed=0)
    result = unroll(spec, params, X)
"""

from cells import gru
from cells import lstm
from cells import peephole_lstm
from cells import rnn
from cells.utils import (
    HiddenState,
    LAYOUT_VERSION,
    MaskedParameterSet,
    ParameterLayout,
    Readout,
    RecurrentCellSpec,
    initialize,
    parameter_count,
    predict,
    push_jacobian,
    sequence_loss,
    step,
    temporal_jacobian,
    unroll,
    zero_state,
)

CELLS = {
    rnn.ARCH: rnn,
    lstm.ARCH: lstm,
    peephole_lstm.ARCH: peephole_lstm,
    gru.ARCH: gru,
}

__all__ = [
    "CELLS",
    "HiddenState",
    "LAYOUT_VERSION",
    "MaskedParameterSet",
    "ParameterLayout",
    "Readout",
    "RecurrentCellSpec",
    "gru",
    "initialize",
    "lstm",
    "parameter_count",
    "peephole_lstm",
    "predict",
    "push_jacobian",
    "sequence_loss",
    "rnn",
    "step",
    "temporal_jacobian",
    "unroll",
    "zero_state",
]
