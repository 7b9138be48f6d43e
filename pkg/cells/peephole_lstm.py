"""
LSTM à peepholes: connexions diagonales de l'état de cellule vers les portes.

Les portes i et f lisent c (état précédent), la porte o lit c' (nouvel état).
Chaque peephole est un vecteur p de longueur N: contribution p ⊙ c.
"""
from cells.lstm import preactivation
from cells.utils import HiddenState
from diffcore.tensor import sigmoid, tanh

ARCH = "PeepholeLSTM"
GATES = ("input", "forget", "cell", "output")
PEEPHOLE_GATES = ("input", "forget", "output")
HAS_CELL_STATE = True


def step(blocks, x, state: HiddenState, activation: str = "tanh") -> HiddenState:
    h, c = state.h, state.cell
    i = sigmoid(preactivation(blocks, "input", x, h) + blocks["input.peephole"] * c)
    f = sigmoid(preactivation(blocks, "forget", x, h) + blocks["forget.peephole"] * c)
    g = tanh(preactivation(blocks, "cell", x, h))
    cell = f * c + i * g
    o = sigmoid(preactivation(blocks, "output", x, h) + blocks["output.peephole"] * cell)
    return HiddenState(o * tanh(cell), cell)
