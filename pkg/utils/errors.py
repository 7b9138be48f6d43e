"""
Exceptions du projet RNNPrune.

Chaque famille d'erreur correspond à un code de sortie distinct de la CLI
(voir main.py).
"""
from typing import Iterable, Optional


class RNNPruneError(Exception):
    """Base de toutes les erreurs du projet."""


class ContractViolation(RNNPruneError, ValueError):
    """Précondition violée (forme, cardinalité, imbrication, indices...)."""


class ConfigError(RNNPruneError):
    """
    Configuration invalide.

    Args:
        message: Résumé de l'erreur
        problems: Liste de messages "chemin.du.champ: explication"
    """

    def __init__(self, message: str, problems: Optional[Iterable[str]] = None):
        self.problems = list(problems or [])
        details = "".join(f"\n  - {p}" for p in self.problems)
        super().__init__(f"{message}{details}")


class DataError(RNNPruneError):
    """Jeu de données absent, incohérent ou illisible."""


class ParseError(DataError):
    """Fichier IDX invalide; `offset` indique l'octet fautif."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        self.detail = message
        super().__init__(f"{message} (offset {offset})")


class NumericFailure(RNNPruneError):
    """Échec numérique: NaN, divergence, non-convergence."""

    def __init__(self, message: str, **diagnostics):
        self.diagnostics = diagnostics
        suffix = ", ".join(f"{k}={v}" for k, v in sorted(diagnostics.items()))
        super().__init__(f"{message} [{suffix}]" if suffix else message)
