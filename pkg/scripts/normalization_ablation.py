#!/usr/bin/env python3
"""
Ablation de la normalisation γ du critère jacobien.

Compare, à sparsité égale, le score brut |∂χ/∂θ| et le score divisé par |γ|.
Sans normalisation les poids retenus se concentrent dans une seule porte et
le réseau n'apprend presque rien; avec normalisation ils se répartissent et
chaque porte garde des poids dans chacun de ses rôles (entrée, récurrent, biais).

Usage:
    python scripts/normalization_ablation.py --config config/experiment.yaml --seeds 0 1 2
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
from typing import List, Optional

import pandas as pd

import config
from models.schemas import CompareCell, CompareConfig
from services import storage
from services.experiment_service import run_compare
from utils.logging import get_logger, setup_logging

VARIANTS = {
    "jacobian-normalized": True,
    "jacobian-unnormalized": False,
}


def build_matrix(base_path: str, seeds: List[int], overrides: List[str], out_dir: Optional[str],
                 workers: int) -> CompareConfig:
    base = config.load_experiment(base_path, overrides, out_dir=out_dir)
    cells = [
        CompareCell(label=label, criterion="jacobian", seed=seed,
                    overrides={"criterion.normalize_by_gamma": normalized})
        for label, normalized in VARIANTS.items()
        for seed in seeds
    ]
    return CompareConfig(base=base, cells=cells, workers=workers)


def ordering_holds(runs: pd.DataFrame) -> bool:
    """
    Brut: part max ≥ 90 % et erreur > 50 %.
    Normalisé: part max < 60 %, erreur < 20 % et aucun rôle de porte vide.
    """
    ok = runs[runs["status"] == "ok"].copy()
    for column in ("max_gate_share", "val_error", "empty_roles"):
        ok[column] = pd.to_numeric(ok[column], errors="coerce")
    raw = ok[ok["key"] == "jacobian-unnormalized"]
    norm = ok[ok["key"] == "jacobian-normalized"]
    if raw.empty or norm.empty:
        return False
    return bool(
        (raw["max_gate_share"] >= 0.9).all() and (raw["val_error"] > 50).all()
        and (norm["max_gate_share"] < 0.6).all() and (norm["val_error"] < 20).all()
        and (norm["empty_roles"] == 0).all()
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Ablation de la normalisation γ")
    parser.add_argument("--config", default="config/experiment.yaml")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    parser.add_argument("--strict", action="store_true", help="Code 1 si l'ordre attendu n'est pas observé")
    args = parser.parse_args(argv)

    setup_logging()
    log = get_logger("normalization_ablation")

    matrix = build_matrix(args.config, args.seeds, args.overrides, args.out, args.workers)
    result = run_compare(matrix)
    runs = pd.DataFrame(result["runs"])

    table = runs[["key", "seed", "status", "max_gate_share", "empty_roles", "val_error"]]
    out_dir = os.path.dirname(result["paths"]["summary_csv"])
    storage.write_csv(os.path.join(out_dir, "normalization_ablation.csv"), table)

    print("\nABLATION DE LA NORMALISATION γ")
    print("=" * 60)
    print(table.to_string(index=False))
    print()
    print(result["summary"][["key", "runs", "missing", "display"]].to_string(index=False))

    holds = ordering_holds(runs)
    log.info(f"Ordre brut/normalisé {'observé' if holds else 'NON observé'}")
    return 1 if args.strict and not holds else 0


if __name__ == "__main__":
    sys.exit(main())
