#!/usr/bin/env python3
"""
Balayage de sparsité (90 %, 95 %, 98 %) pour chaque critère.

Mode --prune-only: élague deux fois chaque case et vérifie ‖c‖₀ = K et des
masques identiques octet pour octet. Sinon la matrice complète (élagage puis
entraînement) passe par run_compare.

Usage:
    python scripts/sparsity_sweep.py --config config/experiment.yaml --prune-only
    python scripts/sparsity_sweep.py --config config/compare.yaml --seeds 0 1 2
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
from services.criteria import CRITERIA
from services.experiment_service import ExperimentService, run_compare
from utils.logging import get_logger, setup_logging

SPARSITIES = [0.90, 0.95, 0.98]


def _label(criterion: str, sparsity: float) -> str:
    return f"{criterion}-{round(sparsity * 100)}"


def check_masks(base_path: str, criteria: List[str], sparsities: List[float], seed: int,
                overrides: List[str], out_dir: Optional[str]) -> pd.DataFrame:
    """Cardinalité et déterminisme des masques, sans entraînement."""
    log = get_logger("sparsity_sweep")
    rows = []
    for sparsity in sparsities:
        for criterion in criteria:
            cfg = config.load_experiment(
                base_path, [*overrides, f"criterion.name={criterion}", f"sparsity={sparsity}"], seed, out_dir,
            )
            cfg = cfg.model_copy(update={"name": f"{cfg.name}-{_label(criterion, sparsity)}"})
            first = ExperimentService(cfg).prune()
            with open(first["mask_path"], "rb") as f:
                blob = f.read()
            again = ExperimentService(cfg).prune()
            with open(again["mask_path"], "rb") as f:
                identical = f.read() == blob
            retained = first["connectivity"]["retained"]
            rows.append({
                "criterion": criterion,
                "sparsity": sparsity,
                "k": first["k"],
                "retained": retained,
                "exact": retained == first["k"],
                "deterministic": identical,
                "ratio": first["connectivity"]["ratio"],
                "timing_ms": first["timing_ms"],
            })
            if retained != first["k"] or not identical:
                log.error(f"{_label(criterion, sparsity)}: masque non conforme (K={first['k']}, "
                          f"retenus={retained}, identiques={identical})")
    return pd.DataFrame(rows)


def build_matrix(base_path: str, criteria: List[str], sparsities: List[float], seeds: List[int],
                 overrides: List[str], out_dir: Optional[str], workers: int) -> CompareConfig:
    base = config.load_experiment(base_path, overrides, out_dir=out_dir)
    cells = [
        CompareCell(label=_label(criterion, sparsity), criterion=criterion, seed=seed,
                    overrides={"sparsity": sparsity})
        for sparsity in sparsities
        for criterion in criteria
        for seed in seeds
    ]
    return CompareConfig(base=base, cells=cells, workers=workers)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Balayage de sparsité")
    parser.add_argument("--config", default="config/experiment.yaml")
    parser.add_argument("--criteria", nargs="+", default=list(CRITERIA), choices=CRITERIA)
    parser.add_argument("--sparsities", type=float, nargs="+", default=SPARSITIES)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--prune-only", action="store_true", help="Vérifie les masques sans entraîner")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    args = parser.parse_args(argv)

    setup_logging()

    if args.prune_only:
        table = check_masks(args.config, args.criteria, args.sparsities, args.seeds[0],
                            args.overrides, args.out)
        out_dir = args.out or config.load_experiment(args.config, args.overrides).out_dir
        path = storage.write_csv(os.path.join(out_dir, "sparsity_masks.csv"), table)
        print("\nMASQUES PAR SPARSITÉ")
        print("=" * 60)
        print(table.to_string(index=False))
        print(f"\n✓ Tableau: {path}")
        return 0 if bool(table["exact"].all() and table["deterministic"].all()) else 1

    result = run_compare(build_matrix(args.config, args.criteria, args.sparsities, args.seeds,
                                      args.overrides, args.out, args.workers))
    print("\nBALAYAGE DE SPARSITÉ (erreur de validation %)")
    print("=" * 60)
    print(result["summary"][["key", "runs", "missing", "display"]].to_string(index=False))
    print(f"\n✓ Tableau: {result['paths']['summary_csv']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
