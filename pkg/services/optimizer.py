"""
Optimiseur Adam avec masque binaire.

Mise à jour standard avec correction de biais:
    m = β1·m + (1 − β1)·g
    v = β2·v + (1 − β2)·g²
    θ = θ − lr · m̂ / (sqrt(v̂) + ε)

Aux indices masqués: gradient annulé avant la mise à jour, puis projection
θ ← c ⊙ θ, m ← c ⊙ m, v ← c ⊙ v (zéros exacts).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from models.schemas import TrainConfig
from utils.errors import ContractViolation, NumericFailure

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments par groupe de paramètres et compteur de pas."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Ramène la norme globale des gradients à max_norm si elle la dépasse."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              masks: Optional[Dict[str, np.ndarray]], config: TrainConfig) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    Un pas d'Adam masqué.

    Args:
        state: État courant (non modifié)
        params: Paramètres par groupe
        grads: Gradients par groupe (mêmes formes)
        masks: Masques binaires par groupe (groupes absents = denses)
        config: lr, β1, β2, ε

    Returns:
        (nouveaux paramètres, nouvel état)

    Raises:
        NumericFailure: gradient NaN ou infini (le pas n'est pas appliqué)
    """
    masks = masks or {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ContractViolation(f"gradient manquant ou de forme invalide pour {name}")
        bad = int(np.count_nonzero(~np.isfinite(g)))
        if bad:
            raise NumericFailure("gradient non fini, pas annulé", group=name, nan_count=bad, step=state.t + 1)

    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        c = masks.get(name)
        g = grads[name] if c is None else grads[name] * c
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        updated = p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        if c is not None:
            updated, m, v = c * updated, c * m, c * v
        new_params[name], new_m[name], new_v[name] = updated, m, v
    return new_params, AdamState(new_m, new_v, t)
