"""
Fonctions composées (pertes, softmax) construites sur les primitives tracées.
"""
from typing import Optional

import numpy as np

from diffcore.tensor import Tensor, as_tensor, exp, log, square, tsum


def logsumexp(z: Tensor, axis: int = -1) -> Tensor:
    # Le décalage par le max est une constante: le résultat n'en dépend pas
    shift = np.max(z.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return as_tensor(shift) + log(tsum(exp(z - shift), axis=axis, keepdims=True))


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    return z - logsumexp(z, axis=axis)


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(z, axis=axis))


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,))
    valid = labels >= 0
    out[valid, labels[valid]] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Entropie croisée softmax moyenne.

    Args:
        logits: (..., O)
        labels: Entiers (...,); -1 = position ignorée
        weights: Poids optionnels (...,), combinés au masque des positions ignorées

    Returns:
        Scalaire: somme pondérée des NLL / somme des poids
    """
    labels = np.asarray(labels, dtype=np.int64)
    targets = one_hot(labels, logits.shape[-1])
    mask = (labels >= 0).astype(np.float64)
    if weights is not None:
        mask = mask * np.asarray(weights, dtype=np.float64)
    nll = -tsum(log_softmax(logits) * targets, axis=-1)
    denom = float(mask.sum()) if mask.sum() > 0 else 1.0
    return tsum(nll * mask) / denom


def sum_of_squares(x: Tensor) -> Tensor:
    return tsum(square(x))
