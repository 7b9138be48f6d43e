"""
Utilitaires communs aux cellules récurrentes.

- RecurrentCellSpec, ParameterLayout: description et ordre d'aplatissement figé
  des paramètres (par porte: bloc d'entrée, bloc récurrent, biais, puis
  peephole éventuel)
- MaskedParameterSet: w, masque c et θ = c ⊙ w
- Readout: couche linéaire de sortie (jamais élaguée)
- initialize, step, unroll, temporal_jacobian
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from diffcore.tensor import DualTensor, Tensor, as_tensor, broadcast_to, no_grad
from diffcore.functional import cross_entropy, log_softmax
from utils.errors import ContractViolation

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1
ARCHS = ("RNN", "LSTM", "PeepholeLSTM", "GRU")
ROLES = ("input", "recurrent", "bias")
ACTIVATIONS = ("tanh", "identity")
INIT_SCHEMES = ("normal", "glorot", "uniform", "standard_normal")


def _registry():
    from cells import CELLS
    return CELLS


# =============================================================================
# SPÉCIFICATION ET DISPOSITION DES PARAMÈTRES
# =============================================================================

@dataclass(frozen=True)
class RecurrentCellSpec:
    """
    Architecture d'une couche récurrente.

    Attributes:
        arch: RNN, LSTM, PeepholeLSTM ou GRU
        input_dim: D
        hidden_dim: N
        activation: "tanh" (défaut) ou "identity" (RNN linéaire, tests)
    """
    arch: str
    input_dim: int
    hidden_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ContractViolation(f"architecture inconnue: {self.arch} (attendu: {', '.join(ARCHS)})")
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ContractViolation(f"dimensions invalides D={self.input_dim}, N={self.hidden_dim}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"activation inconnue: {self.activation}")
        if self.activation != "tanh" and self.arch != "RNN":
            raise ContractViolation("l'activation identity n'existe que pour le RNN simple")

    @property
    def cell(self):
        return _registry()[self.arch]

    @property
    def layout(self) -> "ParameterLayout":
        return ParameterLayout.for_spec(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arch": self.arch,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "activation": self.activation,
        }


@dataclass(frozen=True)
class Block:
    """Bloc contigu du vecteur plat de paramètres."""
    name: str
    gate: str
    gate_id: int
    role: str
    kind: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def stop(self) -> int:
        return self.offset + self.size


_LAYOUTS: Dict[RecurrentCellSpec, "ParameterLayout"] = {}


@dataclass(frozen=True)
class ParameterLayout:
    """
    Ordre d'aplatissement figé et étiquettes (porte, rôle) par indice.

    Les peepholes portent le rôle "recurrent" (ils lisent l'état de cellule)
    et le type de bloc "peephole".
    """
    spec: RecurrentCellSpec
    gates: Tuple[str, ...]
    blocks: Tuple[Block, ...]
    gate_ids: np.ndarray = field(repr=False, compare=False)
    role_ids: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def for_spec(cls, spec: RecurrentCellSpec) -> "ParameterLayout":
        cached = _LAYOUTS.get(spec)
        if cached is not None:
            return cached
        cell = spec.cell
        D, N = spec.input_dim, spec.hidden_dim
        blocks: List[Block] = []
        offset = 0
        for gid, gate in enumerate(cell.GATES):
            parts = [("input", "input", (D, N)), ("recurrent", "recurrent", (N, N)), ("bias", "bias", (N,))]
            if gate in cell.PEEPHOLE_GATES:
                parts.append(("recurrent", "peephole", (N,)))
            for role, kind, shape in parts:
                block = Block(f"{gate}.{kind}", gate, gid, role, kind, shape, offset)
                blocks.append(block)
                offset += block.size
        gate_ids = np.empty(offset, dtype=np.int16)
        role_ids = np.empty(offset, dtype=np.int8)
        for b in blocks:
            gate_ids[b.offset:b.stop] = b.gate_id
            role_ids[b.offset:b.stop] = ROLES.index(b.role)
        gate_ids.setflags(write=False)
        role_ids.setflags(write=False)
        layout = cls(spec, tuple(cell.GATES), tuple(blocks), gate_ids, role_ids)
        _LAYOUTS[spec] = layout
        return layout

    @property
    def total(self) -> int:
        return self.blocks[-1].stop

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def role_mask(self, role: str) -> np.ndarray:
        return self.role_ids == ROLES.index(role)

    def split(self, theta: Union[np.ndarray, Tensor, DualTensor]) -> Dict[str, Any]:
        """Découpe le vecteur plat en blocs nommés (tableaux ou tenseurs tracés)."""
        if theta.shape != (self.total,):
            raise ContractViolation(f"vecteur de paramètres de forme {theta.shape}, attendu ({self.total},)")
        return {b.name: theta[b.offset:b.stop].reshape(b.shape) for b in self.blocks}

    def flatten(self, blocks: Dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.total)
        for b in self.blocks:
            out[b.offset:b.stop] = np.asarray(blocks[b.name], dtype=np.float64).reshape(-1)
        return out


def parameter_count(spec: RecurrentCellSpec) -> int:
    """
    Nombre de paramètres de la couche récurrente (lecture exclue).

    RNN: D·N + N² + N; GRU: 3×; LSTM: 4×; PeepholeLSTM: 4× + 3N.
    """
    return spec.layout.total


# =============================================================================
# PARAMÈTRES MASQUÉS
# =============================================================================

@dataclass
class MaskedParameterSet:
    """
    Paramètres denses w, masque binaire c, θ = c ⊙ w.

    Args:
        spec: Architecture
        w: Vecteur plat float64 (longueur P)
        c: Masque 0/1 (longueur P); tout à 1 si None
        seed: Graine d'initialisation (provenance)
    """
    spec: RecurrentCellSpec
    w: np.ndarray
    c: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        total = self.spec.layout.total
        self.w = np.array(self.w, dtype=np.float64).reshape(-1)
        if self.w.shape != (total,):
            raise ContractViolation(f"w de longueur {self.w.size}, attendu {total}")
        if self.c is None:
            self.c = np.ones(total, dtype=np.uint8)
        self.c = np.asarray(self.c)
        if self.c.shape != (total,):
            raise ContractViolation(f"masque de longueur {self.c.size}, attendu {total}")
        if not np.isin(self.c, (0, 1)).all():
            raise ContractViolation("le masque doit être binaire")
        self.c = self.c.astype(np.uint8)

    @property
    def layout(self) -> ParameterLayout:
        return self.spec.layout

    @property
    def theta(self) -> np.ndarray:
        return self.c * self.w

    @property
    def count(self) -> int:
        """‖c‖₀"""
        return int(self.c.sum())

    @property
    def density(self) -> float:
        return self.count / self.c.size

    def apply_mask(self) -> "MaskedParameterSet":
        """Projection w ← c ⊙ w (zéros exacts aux indices masqués)."""
        self.w = self.c * self.w
        return self

    def with_mask(self, c: np.ndarray) -> "MaskedParameterSet":
        return MaskedParameterSet(self.spec, self.w.copy(), np.asarray(c).copy(), self.seed).apply_mask()

    def copy(self) -> "MaskedParameterSet":
        return MaskedParameterSet(self.spec, self.w.copy(), self.c.copy(), self.seed)

    def blocks(self) -> Dict[str, np.ndarray]:
        return self.layout.split(self.theta)


def _theta(spec: RecurrentCellSpec, params: Any):
    if isinstance(params, MaskedParameterSet):
        if params.spec != spec:
            raise ContractViolation(f"paramètres pour {params.spec}, cellule {spec}")
        return as_tensor(params.theta)
    if isinstance(params, (Tensor, DualTensor)):
        return params
    return as_tensor(np.asarray(params, dtype=np.float64))


# =============================================================================
# INITIALISATION
# =============================================================================

def initialize(spec: RecurrentCellSpec, scheme: str = "normal", seed: int = 0,
               mean: float = 0.0, std: float = 0.1) -> MaskedParameterSet:
    """
    Initialise les paramètres de la couche récurrente (masque plein).

    Args:
        spec: Architecture
        scheme: normal (N(mean, std), std = écart-type), glorot (uniforme
            ±sqrt(6/(fan_in+fan_out)) par matrice, vecteurs à zéro),
            uniform (U(0, 0.1)), standard_normal (N(0, 1))
        seed: Graine (déterministe)

    Returns:
        MaskedParameterSet
    """
    if scheme not in INIT_SCHEMES:
        raise ContractViolation(f"schéma d'initialisation inconnu: {scheme}")
    layout = spec.layout
    rng = np.random.default_rng(seed)
    if scheme == "normal":
        w = rng.normal(mean, std, layout.total)
    elif scheme == "uniform":
        w = rng.uniform(0.0, 0.1, layout.total)
    elif scheme == "standard_normal":
        w = rng.standard_normal(layout.total)
    else:
        w = np.zeros(layout.total)
        for b in layout.blocks:
            if len(b.shape) == 2:
                bound = np.sqrt(6.0 / (b.shape[0] + b.shape[1]))
                w[b.offset:b.stop] = rng.uniform(-bound, bound, b.size)
    logger.debug(f"Initialisation {scheme} de {spec.arch} ({layout.total} paramètres, seed={seed})")
    return MaskedParameterSet(spec, w, None, seed)


@dataclass
class Readout:
    """
    Couche de sortie linéaire h -> logits, initialisée Glorot, jamais élaguée.
    """
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def initialize(cls, hidden_dim: int, output_dim: int, seed: int = 0) -> "Readout":
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (hidden_dim + output_dim))
        return cls(rng.uniform(-bound, bound, (hidden_dim, output_dim)), np.zeros(output_dim))

    @property
    def output_dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, h, weight=None, bias=None):
        weight = as_tensor(self.weight) if weight is None else weight
        bias = as_tensor(self.bias) if bias is None else bias
        return h @ weight + bias

    def copy(self) -> "Readout":
        return Readout(self.weight.copy(), self.bias.copy())


# =============================================================================
# ÉVALUATION
# =============================================================================

class HiddenState(NamedTuple):
    """État caché h, plus l'état de cellule pour les LSTM."""
    h: Any
    cell: Any = None


class UnrollResult(NamedTuple):
    states: List[HiddenState]
    outputs: Any


def zero_state(spec: RecurrentCellSpec, batch: Tuple[int, ...] = ()) -> HiddenState:
    """État initial nul (h et cellule)."""
    h = as_tensor(np.zeros(batch + (spec.hidden_dim,)))
    cell = as_tensor(np.zeros(batch + (spec.hidden_dim,))) if spec.cell.HAS_CELL_STATE else None
    return HiddenState(h, cell)


def _check_state(spec: RecurrentCellSpec, state: HiddenState, batch: Tuple[int, ...]) -> HiddenState:
    expected = batch + (spec.hidden_dim,)
    if tuple(state.h.shape) != expected:
        raise ContractViolation(f"état caché de forme {tuple(state.h.shape)}, attendu {expected}")
    if spec.cell.HAS_CELL_STATE:
        if state.cell is None or tuple(state.cell.shape) != expected:
            raise ContractViolation(f"état de cellule manquant ou de forme invalide (attendu {expected})")
        return HiddenState(_wrap(state.h), _wrap(state.cell))
    return HiddenState(_wrap(state.h), None)


def _wrap(x):
    return x if isinstance(x, (Tensor, DualTensor)) else as_tensor(x)


def cell_step(spec: RecurrentCellSpec, blocks: Dict[str, Any], x, state: HiddenState) -> HiddenState:
    """Pas de cellule sur des blocs déjà découpés (chemin tracé, sans vérification)."""
    return spec.cell.step(blocks, x, state, spec.activation)


def step(spec: RecurrentCellSpec, params: Any, x: Any, state: Optional[HiddenState] = None) -> HiddenState:
    """
    Un pas de la cellule: (x, état) -> état suivant.

    Args:
        spec: Architecture
        params: MaskedParameterSet, vecteur θ plat (tableau ou Tensor)
        x: Entrée (D,) ou (B, D)
        state: État courant (zéros si None)

    Returns:
        HiddenState de Tensor
    """
    x = _wrap(x)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ContractViolation(f"entrée de forme {tuple(x.shape)}, attendu (D={spec.input_dim},) ou (B, D)")
    batch = tuple(x.shape[:-1])
    state = zero_state(spec, batch) if state is None else _check_state(spec, state, batch)
    blocks = spec.layout.split(_theta(spec, params))
    return cell_step(spec, blocks, x, state)


def unroll(spec: RecurrentCellSpec, params: Any, X: Any, readout: Optional[Readout] = None,
           mode: str = "last", state: Optional[HiddenState] = None,
           readout_params: Optional[Tuple[Any, Any]] = None) -> UnrollResult:
    """
    Déroule la cellule sur une séquence.

    Args:
        spec: Architecture
        params: MaskedParameterSet ou θ plat
        X: Séquences (B, S, D) ou (S, D)
        readout: Couche de sortie (None: pas de sortie)
        mode: "last" (logits du dernier pas) ou "all" (logits de chaque pas)
        state: État initial (zéros si None)
        readout_params: (poids, biais) tracés remplaçant ceux du readout

    Returns:
        UnrollResult(states h^(1..S), sorties)
    """
    if mode not in ("last", "all"):
        raise ContractViolation(f"mode de lecture inconnu: {mode}")
    X = np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != spec.input_dim:
        raise ContractViolation(f"séquences de forme {X.shape}, attendu (B, S, D={spec.input_dim})")
    if X.shape[1] == 0:
        raise ContractViolation("séquence vide (S = 0)")

    batch = (X.shape[0],)
    state = zero_state(spec, batch) if state is None else _check_state(spec, state, batch)
    blocks = spec.layout.split(_theta(spec, params))
    states: List[HiddenState] = []
    for t in range(X.shape[1]):
        state = cell_step(spec, blocks, as_tensor(X[:, t, :]), state)
        states.append(state)

    outputs = None
    if readout is not None:
        weight, bias = readout_params if readout_params is not None else (None, None)
        if mode == "last":
            outputs = readout.logits(states[-1].h, weight, bias)
        else:
            outputs = [readout.logits(s.h, weight, bias) for s in states]

    if single:
        states = [HiddenState(s.h[0], s.cell[0] if s.cell is not None else None) for s in states]
        if outputs is not None:
            outputs = outputs[0] if mode == "last" else [o[0] for o in outputs]
    return UnrollResult(states, outputs)


def sequence_loss(spec: RecurrentCellSpec, params: Any, readout: Readout, X: np.ndarray, y: np.ndarray,
                  mode: str = "last", readout_params: Optional[Tuple[Any, Any]] = None):
    """
    Entropie croisée moyenne.

    mode "last": y (B,), logits du dernier pas uniquement.
    mode "all": y (B, S) avec -1 aux pas ignorés; moyenne sur les pas ciblés.
    """
    result = unroll(spec, params, X, readout, mode=mode, readout_params=readout_params)
    y = np.asarray(y, dtype=np.int64)
    if mode == "last":
        return cross_entropy(result.outputs, y)
    if y.ndim != 2:
        raise ContractViolation(f"cibles de forme {y.shape}, attendu (B, S) en mode all")
    total = int((y >= 0).sum())
    if total == 0:
        raise ContractViolation("aucun pas ciblé dans le minibatch")
    loss = None
    for t, logits in enumerate(result.outputs):
        n_t = int((y[:, t] >= 0).sum())
        if n_t == 0:
            continue
        term = cross_entropy(logits, y[:, t]) * (n_t / total)
        loss = term if loss is None else loss + term
    return loss


def predict(spec: RecurrentCellSpec, params: Any, readout: Readout, X: np.ndarray) -> np.ndarray:
    """Log-probabilités du dernier pas, sans trace."""
    with no_grad():
        result = unroll(spec, params, X, readout, mode="last")
        return log_softmax(result.outputs).data


# =============================================================================
# JACOBIENNE TEMPORELLE
# =============================================================================

def probe_directions(hidden_dim: int, batch: Tuple[int, ...], probe: str = "frobenius") -> np.ndarray:
    """
    Directions propagées sur h: identité (N directions, Jacobienne complète)
    ou vecteur de uns (1 direction, J·1). Forme (K,) + batch + (N,).
    """
    if probe == "frobenius":
        eye = np.eye(hidden_dim).reshape((hidden_dim,) + (1,) * len(batch) + (hidden_dim,))
        return np.broadcast_to(eye, (hidden_dim,) + batch + (hidden_dim,)).copy()
    if probe == "ones_vector":
        return np.ones((1,) + batch + (hidden_dim,))
    raise ContractViolation(f"mode de sonde inconnu: {probe}")


def push_jacobian(spec: RecurrentCellSpec, blocks: Dict[str, Any], x, state: HiddenState,
                  probe: str = "frobenius"):
    """
    Tangente de h^(t+1) pour des directions sur h^(t), état de cellule fixe.

    Reste tracée: la norme de la tangente est différentiable par rapport à θ.

    Returns:
        Tensor de forme (K,) + batch + (N,); pour "frobenius", [j, ..., i] = J_ij
    """
    h = state.h.primal if isinstance(state.h, DualTensor) else state.h
    batch = tuple(h.shape[:-1])
    directions = as_tensor(probe_directions(spec.hidden_dim, batch, probe))
    out = cell_step(spec, blocks, x, HiddenState(DualTensor(h, directions), state.cell))
    if isinstance(out.h, DualTensor):
        return out.h.tangent
    return broadcast_to(as_tensor(0.0), directions.shape)


def temporal_jacobian(spec: RecurrentCellSpec, params: Any, x: Any, state: HiddenState) -> np.ndarray:
    """
    Jacobienne exacte ∂h^(t+1)/∂h^(t) (cellule LSTM tenue fixe).

    Args:
        x: Entrée au pas t+1, (D,) ou (B, D)
        state: État au pas t

    Returns:
        (N, N) ou (B, N, N); J[..., i, j] = ∂h'_i/∂h_j
    """
    x = _wrap(x)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ContractViolation(f"entrée de forme {tuple(x.shape)}, attendu (D={spec.input_dim},) ou (B, D)")
    batch = tuple(x.shape[:-1])
    state = _check_state(spec, state, batch)
    with no_grad():
        blocks = spec.layout.split(_theta(spec, params))
        tangent = push_jacobian(spec, blocks, x, state, "frobenius")
    return np.moveaxis(tangent.data, 0, -1)
