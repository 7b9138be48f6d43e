#!/usr/bin/env python3
"""
Ablation de l'initialisation: le critère jacobien contre l'élagage aléatoire
sous plusieurs schémas (Glorot, N(0, 1), uniforme U(0, 0.1)).

Usage:
    python scripts/init_ablation.py --config config/experiment.yaml --seeds 0 1 2
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
from typing import List, Optional

import config
from models.schemas import CompareCell, CompareConfig
from services.experiment_service import run_compare
from utils.logging import setup_logging

SCHEMES = ["glorot", "standard_normal", "uniform"]
CRITERIA = ["jacobian", "random"]


def build_matrix(base_path: str, schemes: List[str], seeds: List[int], overrides: List[str],
                 out_dir: Optional[str], workers: int) -> CompareConfig:
    base = config.load_experiment(base_path, overrides, out_dir=out_dir)
    cells = [
        CompareCell(label=f"{criterion}-{scheme}", criterion=criterion, seed=seed,
                    overrides={"init.scheme": scheme})
        for scheme in schemes
        for criterion in CRITERIA
        for seed in seeds
    ]
    return CompareConfig(base=base, cells=cells, workers=workers)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Ablation du schéma d'initialisation")
    parser.add_argument("--config", default="config/experiment.yaml")
    parser.add_argument("--schemes", nargs="+", default=SCHEMES, choices=SCHEMES)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    args = parser.parse_args(argv)

    setup_logging()
    result = run_compare(build_matrix(args.config, args.schemes, args.seeds, args.overrides,
                                      args.out, args.workers))

    print("\nABLATION DE L'INITIALISATION (erreur de validation %)")
    print("=" * 60)
    print(result["summary"][["key", "runs", "missing", "display"]].to_string(index=False))
    print(f"\n✓ Tableau: {result['paths']['summary_csv']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
