#!/usr/bin/env python3
"""
Spectre des Jacobiennes temporelles et connectivité à l'initialisation.

Mesure, sur le minibatch du critère et l'initialisation de la configuration:
- σ moyen et part des σ < seuil (réseau dense)
- ratio I/R, part max d'une porte et rôles vides des masques jacobien et SNIP

Usage:
    python scripts/init_spectrum.py --config config/experiment.yaml
    python scripts/init_spectrum.py --criteria jacobian snip foresight --strict
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
from typing import List, Optional

import pandas as pd

import config
from services.experiment_service import ExperimentService
from utils.logging import get_logger, setup_logging


def connectivity_table(report: dict) -> pd.DataFrame:
    return pd.DataFrame([
        {"mask": label, "ratio": values["ratio"], "max_gate_share": values["max_gate_share"],
         "retained": values["retained"], "empty_roles": len(values["missing_roles"])}
        for label, values in report["connectivity"].items()
    ])


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Spectre et connectivité à l'initialisation")
    parser.add_argument("--config", default="config/experiment.yaml")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--criteria", nargs="+", default=["jacobian", "snip"])
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    parser.add_argument("--strict", action="store_true",
                        help="Code 1 si le ratio I/R jacobien n'est pas inférieur à celui de SNIP")
    args = parser.parse_args(argv)

    setup_logging()
    log = get_logger("init_spectrum")

    cfg = config.load_experiment(args.config, args.overrides, args.seed, args.out)
    service = ExperimentService(cfg, run_id=f"{cfg.name}-init")
    report = service.init_report(tuple(args.criteria))
    spectrum = report["spectrum"]
    table = connectivity_table(report)

    print("\nSPECTRE À L'INITIALISATION")
    print("=" * 60)
    print(f"σ moyen:            {spectrum['mean_sigma']:.4f}")
    print(f"σ < {spectrum['near_zero_threshold']}:          {100 * spectrum['near_zero_fraction']:.1f}%")
    print(f"σ max:              {spectrum['max_sigma']:.4f}")
    print(f"χ:                  {spectrum['chi']:.6g}")
    print(f"\nCONNECTIVITÉ (K={report['k']})")
    print("=" * 60)
    print(table.to_string(index=False))
    print(f"\n✓ Rapport: {report['paths']['report']}")

    ratios = table.set_index("mask")["ratio"]
    if "jacobian" in ratios and "snip" in ratios and not ratios["jacobian"] < ratios["snip"]:
        log.warning(f"Ratio I/R jacobien {ratios['jacobian']:.4f} ≥ SNIP {ratios['snip']:.4f}")
        return 1 if args.strict else 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
