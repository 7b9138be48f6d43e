"""
Tableaux de synthèse des comparaisons (erreur de validation moyenne ± écart-type
par case critère/variante).
"""
import logging
import os
from typing import Any, Dict, List, Optional

import pandas as pd

from services import storage

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["key", "criterion", "seed", "run_id", "config_hash", "status", "val_error", "ratio",
               "max_gate_share", "empty_roles", "retained", "timing_ms", "error"]
SUMMARY_COLUMNS = ["key", "criterion", "runs", "missing", "mean", "std", "display", "seeds", "config_hash"]


def runs_frame(runs: List[Dict[str, Any]]) -> pd.DataFrame:
    """Une ligne par run, colonnes absentes remplies par None."""
    return pd.DataFrame([{c: r.get(c) for c in RUN_COLUMNS} for r in runs], columns=RUN_COLUMNS)


def format_mean_std(mean: Optional[float], std: Optional[float], digits: int = 2) -> str:
    if mean is None or pd.isna(mean):
        return "n/a"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def summarize_runs(runs: List[Dict[str, Any]], config_hash: str = "") -> pd.DataFrame:
    """
    Agrège les runs par case.

    L'écart-type est celui de la population (ddof=0): des runs identiques
    donnent 0. Les runs en échec comptent dans `missing`. `seeds` liste les
    graines de la case ("0;1;2"), `config_hash` est celui de la comparaison.

    Returns:
        DataFrame (SUMMARY_COLUMNS), ordre de première apparition
    """
    df = runs_frame(runs)
    rows = []
    for key in dict.fromkeys(df["key"]):
        group = df[df["key"] == key]
        ok = group[group["status"] == "ok"]
        values = pd.to_numeric(ok["val_error"], errors="coerce").dropna()
        mean = float(values.mean()) if len(values) else None
        std = float(values.std(ddof=0)) if len(values) else None
        rows.append({
            "key": key,
            "criterion": group["criterion"].iloc[0],
            "runs": int(len(values)),
            "missing": int(len(group) - len(values)),
            "mean": mean,
            "std": std,
            "display": format_mean_std(mean, std),
            "seeds": ";".join(str(s) for s in group["seed"]),
            "config_hash": config_hash,
        })
    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    missing = int(summary["missing"].sum()) if len(summary) else 0
    if missing:
        logger.warning(f"Comparaison: {missing} runs manquants dans le tableau")
    return summary


def write_summary(out_dir: str, runs: List[Dict[str, Any]], meta: Dict[str, Any]) -> Dict[str, str]:
    """Écrit runs.csv, summary.csv et summary.json (meta["config_hash"] sur chaque ligne du résumé)."""
    summary = summarize_runs(runs, meta.get("config_hash", ""))
    paths = {
        "runs": storage.write_csv(os.path.join(out_dir, "runs.csv"), runs_frame(runs)),
        "summary_csv": storage.write_csv(os.path.join(out_dir, "summary.csv"), summary),
    }
    payload = dict(meta, rows=summary.to_dict(orient="records"))
    paths["summary_json"] = storage.write_json(os.path.join(out_dir, "summary.json"), payload)
    logger.info(f"Tableau de comparaison écrit: {paths['summary_csv']}")
    return paths
