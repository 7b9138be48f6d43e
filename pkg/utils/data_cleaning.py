"""
Nettoyage des données avant export JSON.

Les rapports contiennent des flottants numpy, des NaN et des ratios infinis
(I/R sans connexion récurrente) que json refuse ou écrit de façon non portable.
"""
import math
from typing import Any, List

import numpy as np
import pandas as pd


def sanitize_value(val: Any) -> Any:
    """
    Convertit une valeur en type JSON natif.

    - numpy scalaires -> int/float/bool Python
    - NaN, inf, -inf -> None
    - tableaux numpy -> listes (récursif)
    - dict/list/tuple -> nettoyés récursivement
    """
    if isinstance(val, dict):
        return {str(k): sanitize_value(v) for k, v in val.items()}
    if isinstance(val, (list, tuple)):
        return [sanitize_value(v) for v in val]
    if isinstance(val, np.ndarray):
        return [sanitize_value(v) for v in val.tolist()]
    if isinstance(val, np.bool_):
        return bool(val)
    if isinstance(val, np.integer):
        return int(val)
    if isinstance(val, (float, np.floating)):
        val = float(val)
        if math.isnan(val) or math.isinf(val):
            return None
        return val
    return val


def sanitize_for_json(df: pd.DataFrame) -> List[dict]:
    """
    Nettoie un DataFrame pour le rendre JSON-ready.

    Args:
        df: DataFrame pandas à nettoyer

    Returns:
        Liste de dictionnaires (une entrée par ligne)
    """
    df = df.replace([float("inf"), float("-inf"), np.inf, -np.inf], None)
    df = df.astype(object).where(pd.notnull(df), None)
    return [sanitize_value(row) for row in df.to_dict(orient="records")]
