"""
API de différentiation: gradients, JVP, HVP et gradient d'un scalaire dérivé.

Deux niveaux d'appel:
- gradients(), push_forward(), replay(): travaillent sur des Tensor tracés,
  utilisables à l'intérieur d'une fonction différentiée
- grad(), jvp(), hvp(), grad_of_derived_scalar(): prennent des tableaux numpy
  et renvoient un DiffResult (valeurs + statut NaN)
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Sequence

import numpy as np

from diffcore.tensor import (
    DualTensor,
    Tensor,
    as_tensor,
    no_grad,
    set_grad_enabled,
    tsum,
)
from utils.errors import ContractViolation

_nesting = threading.local()


@dataclass(frozen=True)
class DiffResult:
    """
    Résultat d'une différentiation.

    Attributes:
        value: Valeur primale de la fonction (tableau ou liste de tableaux)
        derivatives: Gradients (grad, hvp) ou tangentes (jvp), dans l'ordre des entrées
        nan_count: Nombre de NaN dans value + derivatives (propagés, jamais masqués)
    """
    value: Any
    derivatives: List[np.ndarray] = field(default_factory=list)
    nan_count: int = 0

    @property
    def status(self) -> str:
        return "nan" if self.nan_count else "ok"


def _count_nans(*arrays) -> int:
    total = 0
    for arr in arrays:
        if isinstance(arr, (list, tuple)):
            total += _count_nans(*arr)
        else:
            total += int(np.isnan(np.asarray(arr)).sum())
    return total


def _depth() -> int:
    return getattr(_nesting, "depth", 0)


@contextmanager
def _nested(what: str) -> Iterator[None]:
    if _depth() >= 1:
        raise ContractViolation(
            f"{what}: un seul niveau d'imbrication de dérivées est supporté"
        )
    _nesting.depth = 1
    try:
        yield
    finally:
        _nesting.depth = 0


def _require_top_level(what: str) -> None:
    if _depth() >= 1:
        raise ContractViolation(
            f"{what} détache la trace; utiliser gradients(create_graph=True) "
            "ou push_forward() dans un scalaire dérivé"
        )


# =============================================================================
# NIVEAU TRACÉ
# =============================================================================

def _topological_order(output: Tensor) -> List[Tensor]:
    """Tri topologique (entrées avant consommateurs) restreint aux nœuds tracés."""
    order: List[Tensor] = []
    visited = set()
    stack = [(output, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
    return order


def gradients(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> List[Tensor]:
    """
    Passe inverse: d output / d inputs.

    Args:
        output: Scalaire tracé
        inputs: Tenseurs (feuilles ou intermédiaires) dont on veut le gradient
        create_graph: Trace la passe inverse elle-même (dérivées d'ordre 2)

    Returns:
        Un Tensor par entrée, de même forme; zéro si pas de dépendance
    """
    if isinstance(output, DualTensor):
        raise ContractViolation("gradients(): sortie duale, prendre .primal ou .tangent")
    output = as_tensor(output)
    if output.size != 1:
        raise ContractViolation(f"gradients(): sortie non scalaire de forme {output.shape}")

    grads: Dict[int, Tensor] = {}
    if output.requires_grad:
        order = _topological_order(output)
        grads[id(output)] = Tensor._from_op(np.ones(output.shape), None)
        with set_grad_enabled(create_graph):
            for t in reversed(order):
                node = t.node
                g = grads.get(id(t))
                if node is None or g is None:
                    continue
                needs = tuple(inp.requires_grad for inp in node.inputs)
                cotangents = node.vjp(g, node.inputs, t, needs)
                for inp, ct in zip(node.inputs, cotangents):
                    if ct is None or not inp.requires_grad:
                        continue
                    key = id(inp)
                    grads[key] = ct if key not in grads else grads[key] + ct

    result = []
    for inp in inputs:
        g = grads.get(id(inp))
        result.append(g if g is not None else Tensor._from_op(np.zeros(inp.shape), None))
    return result


def push_forward(f: Callable[..., Any], primals: Sequence[Any], tangents: Sequence[Any]):
    """
    JVP tracé: évalue f sur des nombres duaux sans couper la trace.

    Returns:
        (sortie primale, tangente de sortie) en Tensor
    """
    if len(primals) != len(tangents):
        raise ContractViolation("push_forward(): autant de tangentes que d'entrées")
    duals = [DualTensor(p, t) for p, t in zip(primals, tangents)]
    out = f(*duals)
    if isinstance(out, DualTensor):
        return out.primal, out.tangent
    out = as_tensor(out)
    return out, Tensor._from_op(np.zeros(out.shape), None)


def replay(output: Tensor, substitutions: Dict[int, np.ndarray] | None = None) -> np.ndarray:
    """
    Rejoue la trace de `output` depuis ses feuilles.

    Args:
        output: Tenseur tracé
        substitutions: {id(feuille): nouvelles valeurs}; feuilles absentes = valeurs enregistrées

    Returns:
        Valeur recalculée (identique bit à bit à output.data sans substitution)
    """
    substitutions = substitutions or {}
    values: Dict[int, np.ndarray] = {}
    for t in _topological_order(output):
        if t.node is None:
            values[id(t)] = np.asarray(substitutions.get(id(t), t.data), dtype=np.float64)
            continue
        args = [values.get(id(inp), inp.data) for inp in t.node.inputs]
        values[id(t)] = np.asarray(t.node.fn(*args), dtype=np.float64)
    return values.get(id(output), output.data)


# =============================================================================
# NIVEAU TABLEAUX
# =============================================================================

def _leaves(at: Sequence[Any]) -> List[Tensor]:
    return [Tensor(x, requires_grad=True) for x in at]


def _scalar_output(out: Any, what: str) -> Tensor:
    if isinstance(out, DualTensor):
        raise ContractViolation(f"{what}: la fonction doit renvoyer un scalaire primal")
    out = as_tensor(out)
    if out.size != 1:
        raise ContractViolation(f"{what}: sortie non scalaire de forme {out.shape}")
    return out


def grad(f: Callable[..., Tensor], at: Sequence[Any]) -> DiffResult:
    """
    Gradient d'une fonction scalaire tracée.

    Args:
        f: Fonction de Tensor vers un Tensor scalaire
        at: Points d'évaluation (un tableau par argument de f)

    Returns:
        DiffResult(value, [df/dx_i], nan_count)
    """
    _require_top_level("grad()")
    leaves = _leaves(at)
    with set_grad_enabled(True):
        out = _scalar_output(f(*leaves), "grad()")
    derivs = [g.data for g in gradients(out, leaves)]
    return DiffResult(out.data, derivs, _count_nans(out.data, derivs))


def jvp(f: Callable[..., Any], at: Sequence[Any], direction: Sequence[Any]) -> DiffResult:
    """
    Produit Jacobienne-vecteur en une passe directe.

    Args:
        f: Fonction tracée (une sortie ou un tuple de sorties)
        at: Points d'évaluation
        direction: Une direction par entrée, de même forme

    Returns:
        DiffResult(valeur primale, [J·v pour chaque sortie], nan_count)
    """
    _require_top_level("jvp()")
    if len(at) != len(direction):
        raise ContractViolation("jvp(): autant de directions que d'entrées")
    for x, v in zip(at, direction):
        if np.shape(x) != np.shape(v):
            raise ContractViolation(f"jvp(): direction {np.shape(v)} pour une entrée {np.shape(x)}")

    with no_grad():
        duals = [DualTensor(Tensor(x), Tensor(v)) for x, v in zip(at, direction)]
        out = f(*duals)

    outs = out if isinstance(out, (tuple, list)) else [out]
    values, tangents = [], []
    for o in outs:
        if isinstance(o, DualTensor):
            values.append(o.primal.data)
            tangents.append(o.tangent.data)
        else:
            o = as_tensor(o)
            values.append(o.data)
            tangents.append(np.zeros(o.shape))
    value = values if isinstance(out, (tuple, list)) else values[0]
    return DiffResult(value, tangents, _count_nans(values, tangents))


def grad_of_derived_scalar(g: Callable[..., Tensor], at: Sequence[Any]) -> DiffResult:
    """
    Gradient d'un scalaire construit à partir de dérivées premières.

    `g` reçoit des Tensor feuilles et peut utiliser push_forward() ou
    gradients(create_graph=True); un seul niveau d'imbrication est accepté.
    """
    with _nested("grad_of_derived_scalar()"):
        leaves = _leaves(at)
        with set_grad_enabled(True):
            out = _scalar_output(g(*leaves), "grad_of_derived_scalar()")
        derivs = [d.data for d in gradients(out, leaves)]
    return DiffResult(out.data, derivs, _count_nans(out.data, derivs))


def grad_of_derived_scalars(g: Callable[..., Sequence[Tensor]], at: Sequence[Any]) -> DiffResult:
    """
    Variante de grad_of_derived_scalar pour plusieurs scalaires tracés ensemble.

    La trace est construite une fois; une passe inverse par scalaire.

    Returns:
        DiffResult(valeurs (K,), [[d s_k / d x_i] pour chaque k], nan_count)
    """
    with _nested("grad_of_derived_scalars()"):
        leaves = _leaves(at)
        with set_grad_enabled(True):
            outs = [_scalar_output(o, "grad_of_derived_scalars()") for o in g(*leaves)]
        derivs = [[d.data for d in gradients(o, leaves)] for o in outs]
    values = np.array([float(o.data.reshape(-1)[0]) for o in outs])
    return DiffResult(values, derivs, _count_nans(values, derivs))


def hvp(loss: Callable[..., Tensor], at: Sequence[Any], v: Sequence[Any]) -> DiffResult:
    """
    Produit Hessienne-vecteur: d/dθ <∇L(θ), v>.

    Args:
        loss: Fonction scalaire tracée
        at: Paramètres
        v: Directions (mêmes formes que at)

    Returns:
        DiffResult(valeur de la perte, [H·v], nan_count)
    """
    if len(at) != len(v):
        raise ContractViolation("hvp(): autant de directions que de paramètres")
    for x, d in zip(at, v):
        if np.shape(x) != np.shape(d):
            raise ContractViolation(f"hvp(): direction {np.shape(d)} pour un paramètre {np.shape(x)}")

    with _nested("hvp()"):
        leaves = _leaves(at)
        with set_grad_enabled(True):
            out = _scalar_output(loss(*leaves), "hvp()")
            first = gradients(out, leaves, create_graph=True)
            inner = None
            for gi, di in zip(first, v):
                term = tsum(gi * as_tensor(di))
                inner = term if inner is None else inner + term
        derivs = [h.data for h in gradients(inner, leaves)]
    return DiffResult(out.data, derivs, _count_nans(out.data, derivs))
