"""
Tenseurs tracés, nœuds de trace et nombres duaux.

Chaque primitive est définie une seule fois avec:
- fn:  calcul primal sur des tableaux numpy (sert aussi au rejeu de la trace)
- vjp: règle inverse, écrite avec les primitives elles-mêmes
- jvp: règle directe, écrite avec les primitives elles-mêmes

Comme les règles sont elles-mêmes tracées, on peut différentier un scalaire
construit à partir de dérivées premières (une tangente JVP ou un gradient
obtenu avec create_graph=True). C'est ce qui permet le calcul
"forward-over-reverse" des scores de sensibilité.

Les tangentes d'un DualTensor peuvent porter des axes de tête supplémentaires
(plusieurs directions propagées en une seule passe): tangent.shape ==
directions + primal.shape. Toutes les règles jvp respectent cette convention.

Usage:
    from diffcore.tensor import Tensor, DualTensor, tanh

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    y = tanh(x @ w).sum()
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ContractViolation

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def set_grad_enabled(flag: bool) -> Iterator[None]:
    previous = is_grad_enabled()
    _state.grad_enabled = flag
    try:
        yield
    finally:
        _state.grad_enabled = previous


def no_grad():
    """Désactive l'enregistrement de la trace (évaluation pure)."""
    return set_grad_enabled(False)


@dataclass(frozen=True, eq=False)
class TraceNode:
    """
    Nœud de la trace: une application de primitive.

    Les entrées précèdent toujours le nœud dans l'ordre d'évaluation (DAG).
    `fn` rejoue le calcul primal, `vjp` et `jvp` le différencient.
    """
    op: str
    inputs: Tuple["Tensor", ...]
    fn: Callable[..., np.ndarray]
    vjp: Callable[..., Tuple[Optional["Tensor"], ...]]
    jvp: Callable[..., "Tensor"]


class _Operators:
    """Surcharges d'opérateurs partagées par Tensor et DualTensor."""

    __slots__ = ()
    __array_ufunc__ = None  # np.sin(t) doit échouer au traçage, pas plus tard

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Tensor(_Operators):
    """
    Tableau float64 éventuellement relié à la trace.

    Args:
        data: Valeurs (copiées, converties en float64)
        requires_grad: Feuille différentiable
    """
    __slots__ = ("data", "node", "requires_grad")

    def __init__(self, data: Any, requires_grad: bool = False):
        if isinstance(data, (Tensor, DualTensor)):
            raise ContractViolation("Tensor() attend des valeurs, pas un tenseur tracé")
        self.data = np.array(data, dtype=np.float64)
        self.node: Optional[TraceNode] = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _from_op(cls, data: np.ndarray, node: Optional[TraceNode]) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.node = node
        t.requires_grad = node is not None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() sur un tenseur non scalaire {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, None)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        op = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, op={op}, requires_grad={self.requires_grad})"


class DualTensor(_Operators):
    """
    Paire (primal, tangente) pour le mode direct.

    La tangente a la forme du primal, éventuellement précédée d'axes de
    directions. Les deux composantes sont des Tensor tracés: le JVP reste
    différentiable en mode inverse.
    """
    __slots__ = ("primal", "tangent")

    def __init__(self, primal: Any, tangent: Any):
        if isinstance(primal, DualTensor) or isinstance(tangent, DualTensor):
            raise ContractViolation("imbrication de nombres duaux non supportée")
        primal = as_tensor(primal)
        tangent = as_tensor(tangent)
        lead = tangent.ndim - primal.ndim
        if lead < 0 or tangent.shape[lead:] != primal.shape:
            raise ContractViolation(
                f"tangente {tangent.shape} incompatible avec le primal {primal.shape}"
            )
        self.primal = primal
        self.tangent = tangent

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.primal.shape

    @property
    def ndim(self) -> int:
        return self.primal.ndim

    @property
    def size(self) -> int:
        return self.primal.size

    def __repr__(self) -> str:
        return f"DualTensor(primal={self.primal.shape}, tangent={self.tangent.shape})"


def as_tensor(x: Any) -> Tensor:
    """Enveloppe une constante (tableau, scalaire) en Tensor non tracé."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, DualTensor):
        raise ContractViolation("DualTensor inattendu dans un contexte primal")
    return Tensor._from_op(np.asarray(x, dtype=np.float64), None)


def dual(primal: Any, tangent: Any) -> DualTensor:
    return DualTensor(primal, tangent)


def _apply(op: str, fn, args: Sequence[Any], vjp, jvp):
    if any(isinstance(a, DualTensor) for a in args):
        primals = tuple(a.primal if isinstance(a, DualTensor) else as_tensor(a) for a in args)
        tangents = tuple(a.tangent if isinstance(a, DualTensor) else None for a in args)
        out = _apply(op, fn, primals, vjp, jvp)
        return DualTensor(out, jvp(primals, tangents, out))

    inputs = tuple(as_tensor(a) for a in args)
    data = np.asarray(fn(*(t.data for t in inputs)), dtype=np.float64)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor._from_op(data, TraceNode(op, inputs, fn, vjp, jvp))
    return Tensor._from_op(data, None)


# =============================================================================
# OUTILS DE FORME
# =============================================================================

def _lead(tangent: Tensor, primal: Tensor) -> Tuple[int, ...]:
    return tangent.shape[: tangent.ndim - primal.ndim]


def _expand(tangent: Tensor, primal: Tensor, out: Tensor) -> Tensor:
    """Aligne une tangente sur le rang de la sortie (broadcast à droite)."""
    missing = out.ndim - primal.ndim
    if missing <= 0:
        return tangent
    lead = _lead(tangent, primal)
    return reshape(tangent, lead + (1,) * missing + primal.shape)


def _fill(tangent: Tensor, out: Tensor) -> Tensor:
    lead = tangent.shape[: tangent.ndim - out.ndim]
    if tangent.shape[len(lead):] == out.shape:
        return tangent
    return broadcast_to(tangent, lead + out.shape)


def _zeros_tangent(out: Tensor) -> Tensor:
    return as_tensor(np.zeros(out.shape))


def _unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        extra + i for i, s in enumerate(shape) if s == 1 and g.shape[extra + i] != 1
    )
    return reshape(tsum(g, axis=axes), shape)


def _negative_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(-ndim, 0))
    axes = axis if isinstance(axis, (tuple, list)) else (axis,)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ContractViolation(f"axe {a} hors limites pour un tenseur de rang {ndim}")
        out.append(a - ndim if a >= 0 else a)
    return tuple(out)


def _elementwise_jvp(out: Tensor, terms) -> Tensor:
    total = None
    for tangent, primal, factor in terms:
        if tangent is None:
            continue
        term = _expand(tangent, primal, out)
        term = factor(term)
        total = term if total is None else total + term
    if total is None:
        return _zeros_tangent(out)
    return _fill(total, out)


# =============================================================================
# PRIMITIVES ÉLÉMENT PAR ÉLÉMENT
# =============================================================================

def add(a, b):
    def vjp(g, ins, out, needs):
        return (
            _unbroadcast(g, ins[0].shape) if needs[0] else None,
            _unbroadcast(g, ins[1].shape) if needs[1] else None,
        )

    def jvp(ins, ts, out):
        return _elementwise_jvp(out, [(ts[0], ins[0], lambda t: t), (ts[1], ins[1], lambda t: t)])

    return _apply("add", np.add, (a, b), vjp, jvp)


def sub(a, b):
    def vjp(g, ins, out, needs):
        return (
            _unbroadcast(g, ins[0].shape) if needs[0] else None,
            _unbroadcast(neg(g), ins[1].shape) if needs[1] else None,
        )

    def jvp(ins, ts, out):
        return _elementwise_jvp(out, [(ts[0], ins[0], lambda t: t), (ts[1], ins[1], neg)])

    return _apply("sub", np.subtract, (a, b), vjp, jvp)


def mul(a, b):
    def vjp(g, ins, out, needs):
        x, y = ins
        return (
            _unbroadcast(g * y, x.shape) if needs[0] else None,
            _unbroadcast(g * x, y.shape) if needs[1] else None,
        )

    def jvp(ins, ts, out):
        x, y = ins
        return _elementwise_jvp(out, [(ts[0], x, lambda t: t * y), (ts[1], y, lambda t: t * x)])

    return _apply("mul", np.multiply, (a, b), vjp, jvp)


def div(a, b):
    def vjp(g, ins, out, needs):
        x, y = ins
        return (
            _unbroadcast(g / y, x.shape) if needs[0] else None,
            _unbroadcast(neg(g * out / y), y.shape) if needs[1] else None,
        )

    def jvp(ins, ts, out):
        x, y = ins
        return _elementwise_jvp(
            out, [(ts[0], x, lambda t: t / y), (ts[1], y, lambda t: neg(t * out / y))]
        )

    return _apply("div", np.divide, (a, b), vjp, jvp)


def neg(a):
    def vjp(g, ins, out, needs):
        return (neg(g),)

    def jvp(ins, ts, out):
        return neg(ts[0])

    return _apply("neg", np.negative, (a,), vjp, jvp)


def exp(a):
    def vjp(g, ins, out, needs):
        return (g * out,)

    def jvp(ins, ts, out):
        return ts[0] * out

    return _apply("exp", np.exp, (a,), vjp, jvp)


def log(a):
    def vjp(g, ins, out, needs):
        return (g / ins[0],)

    def jvp(ins, ts, out):
        return ts[0] / ins[0]

    return _apply("log", np.log, (a,), vjp, jvp)


def tanh(a):
    def vjp(g, ins, out, needs):
        return (g * (1.0 - out * out),)

    def jvp(ins, ts, out):
        return ts[0] * (1.0 - out * out)

    return _apply("tanh", np.tanh, (a,), vjp, jvp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    def vjp(g, ins, out, needs):
        return (g * out * (1.0 - out),)

    def jvp(ins, ts, out):
        return ts[0] * (out * (1.0 - out))

    return _apply("sigmoid", _sigmoid, (a,), vjp, jvp)


def power(a, exponent: float):
    if isinstance(exponent, (Tensor, DualTensor)):
        raise ContractViolation("exposant tracé non supporté (constante attendue)")
    p = float(exponent)

    def fn(x):
        return np.power(x, p)

    def vjp(g, ins, out, needs):
        return (g * (p * power(ins[0], p - 1.0)),)

    def jvp(ins, ts, out):
        return ts[0] * (p * power(ins[0], p - 1.0))

    return _apply("power", fn, (a,), vjp, jvp)


def square(a):
    return mul(a, a)


# =============================================================================
# RÉDUCTIONS ET FORMES
# =============================================================================

def tsum(a, axis=None, keepdims: bool = False):
    ndim = a.ndim if isinstance(a, (Tensor, DualTensor)) else np.ndim(a)
    axes = _negative_axes(axis, ndim)

    def fn(x):
        return np.sum(x, axis=axes, keepdims=keepdims)

    def vjp(g, ins, out, needs):
        shape = ins[0].shape
        kept = tuple(1 if (i - len(shape)) in axes else s for i, s in enumerate(shape))
        return (broadcast_to(reshape(g, kept), shape),)

    def jvp(ins, ts, out):
        return tsum(ts[0], axis=axes, keepdims=keepdims)

    return _apply("sum", fn, (a,), vjp, jvp)


def mean(a, axis=None, keepdims: bool = False):
    shape = a.shape if isinstance(a, (Tensor, DualTensor)) else np.shape(a)
    axes = _negative_axes(axis, len(shape))
    count = int(np.prod([shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) / float(count)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    src_shape = a.shape if isinstance(a, (Tensor, DualTensor)) else np.shape(a)
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1]))
        total = int(np.prod(src_shape))
        shape = tuple(total // known if s == -1 else s for s in shape) if known else shape
    if int(np.prod(shape)) != int(np.prod(src_shape)):
        raise ContractViolation(f"reshape impossible {src_shape} -> {shape}")

    def fn(x):
        return np.reshape(x, shape)

    def vjp(g, ins, out, needs):
        return (reshape(g, ins[0].shape),)

    def jvp(ins, ts, out):
        return reshape(ts[0], _lead(ts[0], ins[0]) + shape)

    return _apply("reshape", fn, (a,), vjp, jvp)


def swapaxes(a, axis1: int, axis2: int):
    ndim = a.ndim if isinstance(a, (Tensor, DualTensor)) else np.ndim(a)
    i, j = _negative_axes((axis1, axis2), ndim)

    def fn(x):
        return np.swapaxes(x, i, j)

    def vjp(g, ins, out, needs):
        return (swapaxes(g, i, j),)

    def jvp(ins, ts, out):
        return swapaxes(ts[0], i, j)

    return _apply("swapaxes", fn, (a,), vjp, jvp)


def broadcast_to(a, shape):
    shape = tuple(int(s) for s in shape)

    def fn(x):
        return np.array(np.broadcast_to(x, shape))

    def vjp(g, ins, out, needs):
        return (_unbroadcast(g, ins[0].shape),)

    def jvp(ins, ts, out):
        t = _expand(ts[0], ins[0], out)
        return broadcast_to(t, _lead(ts[0], ins[0]) + shape)

    return _apply("broadcast_to", fn, (a,), vjp, jvp)


def _normalize_index(index, ndim: int) -> Tuple[Any, ...]:
    index = index if isinstance(index, tuple) else (index,)
    for item in index:
        if not (item is Ellipsis or isinstance(item, (int, np.integer, slice))) or isinstance(item, bool):
            raise ContractViolation(
                f"indexation non supportée: {type(item).__name__} (entiers, slices et ... seulement)"
            )
    if sum(item is Ellipsis for item in index) > 1:
        raise ContractViolation("un seul Ellipsis autorisé")
    if Ellipsis in index:
        pos = index.index(Ellipsis)
        fill = ndim - (len(index) - 1)
        index = index[:pos] + (slice(None),) * fill + index[pos + 1:]
    if len(index) > ndim:
        raise ContractViolation(f"trop d'indices ({len(index)}) pour un rang {ndim}")
    return index + (slice(None),) * (ndim - len(index))


def getitem(a, index):
    ndim = a.ndim if isinstance(a, (Tensor, DualTensor)) else np.ndim(a)
    idx = _normalize_index(index, ndim)

    def fn(x):
        return np.array(x[idx])

    def vjp(g, ins, out, needs):
        return (scatter(g, idx, ins[0].shape),)

    def jvp(ins, ts, out):
        return getitem(ts[0], (Ellipsis,) + idx)

    return _apply("getitem", fn, (a,), vjp, jvp)


def scatter(a, index, shape):
    """Place `a` à la position `index` d'un tableau nul de forme `shape`."""
    shape = tuple(int(s) for s in shape)
    idx = _normalize_index(index, len(shape))

    def fn(x):
        out = np.zeros(shape)
        out[idx] = x
        return out

    def vjp(g, ins, out, needs):
        return (getitem(g, idx),)

    def jvp(ins, ts, out):
        lead = _lead(ts[0], ins[0])
        return scatter(ts[0], (slice(None),) * len(lead) + idx, lead + shape)

    return _apply("scatter", fn, (a,), vjp, jvp)


# =============================================================================
# PRODUIT MATRICIEL
# =============================================================================

def _matmul2(a, b):
    def vjp(g, ins, out, needs):
        x, y = ins
        return (
            _unbroadcast(g @ swapaxes(y, -1, -2), x.shape) if needs[0] else None,
            _unbroadcast(swapaxes(x, -1, -2) @ g, y.shape) if needs[1] else None,
        )

    def jvp(ins, ts, out):
        x, y = ins
        total = None
        if ts[0] is not None:
            total = _matmul2(ts[0], y)
        if ts[1] is not None:
            term = _matmul2(x, ts[1])
            total = term if total is None else total + term
        return _fill(total, out) if total is not None else _zeros_tangent(out)

    return _apply("matmul", np.matmul, (a, b), vjp, jvp)


def matmul(a, b):
    """
    Produit matriciel avec les conventions numpy pour les opérandes 1-D.

    Les cas 1-D sont composés de mul/sum/reshape, donc hérités pour les deux
    modes de différentiation.
    """
    a_nd = a.ndim if isinstance(a, (Tensor, DualTensor)) else np.ndim(a)
    b_nd = b.ndim if isinstance(b, (Tensor, DualTensor)) else np.ndim(b)
    if a_nd == 0 or b_nd == 0:
        raise ContractViolation("matmul sur un scalaire")
    a_shape = a.shape if isinstance(a, (Tensor, DualTensor)) else np.shape(a)
    b_shape = b.shape if isinstance(b, (Tensor, DualTensor)) else np.shape(b)
    k_a = a_shape[-1]
    k_b = b_shape[0] if b_nd == 1 else b_shape[-2]
    if k_a != k_b:
        raise ContractViolation(f"matmul: dimensions internes {a_shape} @ {b_shape}")
    if b_nd == 1:
        return tsum(mul(a, b), axis=-1)
    if a_nd == 1:
        if b_nd != 2:
            raise ContractViolation("matmul 1-D @ N-D (N > 2) non supporté")
        return tsum(mul(reshape(a, (k_a, 1)), b), axis=-2)
    return _matmul2(a, b)

