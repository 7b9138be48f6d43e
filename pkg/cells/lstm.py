"""
LSTM standard (portes i, f, g, o).

    i = σ(x W_i + h U_i + b_i)
    f = σ(x W_f + h U_f + b_f)
    g = tanh(x W_g + h U_g + b_g)
    o = σ(x W_o + h U_o + b_o)
    c' = f ⊙ c + i ⊙ g
    h' = o ⊙ tanh(c')
"""
from cells.utils import HiddenState
from diffcore.tensor import sigmoid, tanh

ARCH = "LSTM"
GATES = ("input", "forget", "cell", "output")
PEEPHOLE_GATES = ()
HAS_CELL_STATE = True


def preactivation(blocks, gate, x, h):
    return x @ blocks[f"{gate}.input"] + h @ blocks[f"{gate}.recurrent"] + blocks[f"{gate}.bias"]


def step(blocks, x, state: HiddenState, activation: str = "tanh") -> HiddenState:
    h, c = state.h, state.cell
    i = sigmoid(preactivation(blocks, "input", x, h))
    f = sigmoid(preactivation(blocks, "forget", x, h))
    g = tanh(preactivation(blocks, "cell", x, h))
    o = sigmoid(preactivation(blocks, "output", x, h))
    cell = f * c + i * g
    return HiddenState(o * tanh(cell), cell)
