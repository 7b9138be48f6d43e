"""
GRU.

Convention figée:
    z  = σ(x W_z + h U_z + b_z)              porte de mise à jour
    r  = σ(x W_r + h U_r + b_r)              porte de réinitialisation
    h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)      candidat
    h' = (1 − z) ⊙ h + z ⊙ h̃
"""
from cells.utils import HiddenState
from diffcore.tensor import sigmoid, tanh

ARCH = "GRU"
GATES = ("update", "reset", "candidate")
PEEPHOLE_GATES = ()
HAS_CELL_STATE = False


def _pre(blocks, gate, x, h):
    return x @ blocks[f"{gate}.input"] + h @ blocks[f"{gate}.recurrent"] + blocks[f"{gate}.bias"]


def step(blocks, x, state: HiddenState, activation: str = "tanh") -> HiddenState:
    h = state.h
    z = sigmoid(_pre(blocks, "update", x, h))
    r = sigmoid(_pre(blocks, "reset", x, h))
    candidate = tanh(_pre(blocks, "candidate", x, r * h))
    return HiddenState((1.0 - z) * h + z * candidate, None)
