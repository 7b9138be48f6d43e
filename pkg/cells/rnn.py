"""
RNN simple (Elman): h' = φ(x W_x + h W_h + b), φ = tanh ou identité.

Une seule porte "candidate" portant les blocs d'entrée, récurrent et biais.
"""
from cells.utils import HiddenState
from diffcore.tensor import tanh

ARCH = "RNN"
GATES = ("candidate",)
PEEPHOLE_GATES = ()
HAS_CELL_STATE = False


def step(blocks, x, state: HiddenState, activation: str = "tanh") -> HiddenState:
    a = x @ blocks["candidate.input"] + state.h @ blocks["candidate.recurrent"] + blocks["candidate.bias"]
    return HiddenState(tanh(a) if activation == "tanh" else a, None)
