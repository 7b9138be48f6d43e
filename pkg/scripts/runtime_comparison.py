#!/usr/bin/env python3
"""
Temps de calcul des critères sur un seul minibatch et un seul pas (U = 1).

Seul le calcul score -> masque est chronométré; le chargement des données et
l'initialisation sont faits une fois avant les mesures.

Usage:
    python scripts/runtime_comparison.py --config config/experiment.yaml --repeats 3
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import time
from typing import List, Optional

import pandas as pd

import config
from services import storage
from services.criteria import prune_mask, score_by_name
from services.experiment_service import ExperimentService
from utils.logging import get_logger, setup_logging

CRITERIA = ["jacobian", "foresight", "snip"]


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Temps de calcul des critères d'élagage")
    parser.add_argument("--config", default="config/experiment.yaml")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    args = parser.parse_args(argv)

    setup_logging()
    log = get_logger("runtime_comparison")

    cfg = config.load_experiment(args.config, ["criterion.horizon=1", *args.overrides], args.seed, args.out)
    service = ExperimentService(cfg, run_id=f"{cfg.name}-runtime")
    pset, readout = service.initial_model()
    X, y = service.criterion_batch()
    k = service.target_k()
    seeds = {"approx": service.seeds["approx"], "random_score": service.seeds["random_score"]}

    rows = []
    for name in CRITERIA:
        criterion = cfg.criterion.model_copy(update={"name": name})
        for repeat in range(args.repeats):
            started = time.perf_counter()
            vector = score_by_name(name, service.spec, pset, X, y, criterion, readout,
                                   cfg.cell.readout_mode, seeds)
            prune_mask(vector, k, service.spec.layout, criterion.exempt_bias)
            elapsed = 1000.0 * (time.perf_counter() - started)
            rows.append({"criterion": name, "repeat": repeat, "timing_ms": elapsed})
            log.info(f"{name} #{repeat}: {elapsed:.1f} ms")

    timings = pd.DataFrame(rows)
    summary = timings.groupby("criterion", sort=False)["timing_ms"].agg(["mean", "std", "min"]).reset_index()
    path = storage.write_csv(os.path.join(service.run_dir, "runtime.csv"), timings)
    storage.write_json(os.path.join(service.run_dir, "runtime.json"),
                       dict(service.provenance, batch=int(X.shape[0]), horizon=1,
                            rows=summary.to_dict(orient="records")))

    print("\nTEMPS DES CRITÈRES (ms, un minibatch, U=1)")
    print("=" * 60)
    print(summary.to_string(index=False))
    print(f"\n✓ Mesures écrites: {path}")

    best = summary.set_index("criterion")["min"]
    if best["jacobian"] >= best["foresight"]:
        log.warning("Le critère jacobien n'est pas plus rapide que Foresight sur cette machine")
    return 0


if __name__ == "__main__":
    sys.exit(main())
