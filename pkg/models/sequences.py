"""
Jeux de séquences en mémoire.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Tuple

import numpy as np

from utils.errors import ContractViolation


@dataclass
class SequenceDataset:
    """
    Séquences X (M, S, D) et cibles.

    Attributes:
        X: Entrées float64
        y: Cibles entières; (M,) pour une cible au dernier pas (target_mode "last"),
            (M, S) pour une cible par pas (target_mode "all", -1 = pas ignoré)
        num_classes: Nombre de classes de sortie
        split: "train", "validation", "test" ou "synthetic"
        target_mode: "last" ou "all"
        meta: Métadonnées (normalisation, provenance)
    """
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"
    target_mode: str = "last"
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 3:
            raise ContractViolation(f"X de forme {self.X.shape}, attendu (M, S, D)")
        if self.target_mode not in ("last", "all"):
            raise ContractViolation(f"target_mode inconnu: {self.target_mode}")
        expected = self.X.shape[:1] if self.target_mode == "last" else self.X.shape[:2]
        if self.y.shape != expected:
            raise ContractViolation(f"cibles de forme {self.y.shape}, attendu {expected}")
        valid = self.y[self.y >= 0]
        if valid.size and valid.max() >= self.num_classes:
            raise ContractViolation(f"label {valid.max()} hors de [0, {self.num_classes})")
        if self.target_mode == "last" and (self.y < 0).any():
            raise ContractViolation("label négatif pour une cible au dernier pas")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def seq_len(self) -> int:
        return self.X.shape[1]

    @property
    def input_dim(self) -> int:
        return self.X.shape[2]

    def subset(self, indices, split: str = None) -> "SequenceDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return SequenceDataset(self.X[indices], self.y[indices], self.num_classes,
                               split or self.split, self.target_mode, dict(self.meta))

    def batches(self, batch_size: int, order: np.ndarray = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Itère sur des minibatchs dans l'ordre donné (ordre naturel si None)."""
        if batch_size < 1:
            raise ContractViolation("batch_size doit être >= 1")
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.X[idx], self.y[idx]
