"""
Oracles de vérification: différences finies centrées et Jacobienne exacte
ligne par ligne en mode inverse.

Ces fonctions servent aux tests et à la validation croisée des critères; elles
ne sont pas optimisées.
"""
from typing import Callable, List, Sequence

import numpy as np

from diffcore.api import gradients
from diffcore.tensor import Tensor, as_tensor, no_grad, set_grad_enabled
from utils.errors import ContractViolation

FD_STEP = 1e-5


def central_difference(f: Callable[..., float], at: Sequence[np.ndarray], eps: float = FD_STEP) -> List[np.ndarray]:
    """
    Gradient par différences finies centrées d'une fonction scalaire.

    Args:
        f: Fonction de tableaux numpy vers un scalaire (float ou Tensor)
        at: Points d'évaluation
        eps: Pas

    Returns:
        Un tableau par entrée, de même forme
    """
    points = [np.array(x, dtype=np.float64) for x in at]

    def value(args):
        with no_grad():
            out = f(*args)
        return float(as_tensor(out).data.reshape(-1)[0]) if not isinstance(out, float) else out

    result = []
    for k, x in enumerate(points):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = value(points)
            flat[i] = original - eps
            down = value(points)
            flat[i] = original
            gflat[i] = (up - down) / (2.0 * eps)
        result.append(g)
    return result


def jacobian_fd(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """
    Jacobienne par différences finies centrées, forme (sortie..., entrée...).
    """
    x = np.array(x, dtype=np.float64)

    def value(v):
        with no_grad():
            return np.asarray(as_tensor(f(v)).data, dtype=np.float64)

    out_shape = value(x).shape
    jac = np.zeros(out_shape + x.shape)
    flat = x.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        up = value(x)
        flat[i] = original - eps
        down = value(x)
        flat[i] = original
        jac[(Ellipsis,) + np.unravel_index(i, x.shape)] = (up - down) / (2.0 * eps)
    return jac


def jacobian_rev(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    """
    Jacobienne exacte: une passe inverse par composante de sortie.

    Args:
        f: Fonction tracée d'un Tensor vers un Tensor
        x: Point d'évaluation

    Returns:
        Tableau de forme out.shape + x.shape
    """
    leaf = Tensor(x, requires_grad=True)
    with set_grad_enabled(True):
        out = f(leaf)
    if not isinstance(out, Tensor):
        raise ContractViolation("jacobian_rev(): la fonction doit renvoyer un Tensor primal")
    jac = np.zeros(out.shape + leaf.shape)
    flat_out = out.reshape(-1)
    for i in range(out.size):
        with set_grad_enabled(True):
            component = flat_out[i]
        (g,) = gradients(component, [leaf])
        jac[np.unravel_index(i, out.shape) if out.ndim else ()] = g.data
    return jac


def relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-8) -> float:
    """Erreur relative max(|a - e|) / max(max|e|, floor)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(float(np.max(np.abs(expected))) if expected.size else 0.0, floor)
    return float(np.max(np.abs(actual - expected))) / scale if actual.size else 0.0
