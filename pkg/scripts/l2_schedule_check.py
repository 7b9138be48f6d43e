#!/usr/bin/env python3
"""
Conformité du calendrier d'élagage L2 sur un run court.

Entraîne le réseau dense avec un intervalle raccourci puis relit metrics.csv:
à chaque frontière k·interval la densité doit valoir ⌈d_k·P⌉/P et le nombre
de poids retenus doit décroître.

Usage:
    python scripts/l2_schedule_check.py --config config/synthetic.yaml --interval 5
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import math
from typing import List, Optional

import pandas as pd

import config
from models.schemas import L2Schedule
from services import storage
from services.experiment_service import ExperimentService
from services.training import METRICS_FILE
from utils.logging import get_logger, setup_logging


def expected_rows(schedule: L2Schedule, total: int) -> pd.DataFrame:
    return pd.DataFrame([
        {"step": (i + 1) * schedule.interval, "target": d,
         "expected_retained": int(math.ceil(round(d * total, 9)))}
        for i, d in enumerate(schedule.densities)
    ])


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Conformité du calendrier L2")
    parser.add_argument("--config", default="config/synthetic.yaml")
    parser.add_argument("--interval", type=int, default=5)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR")
    args = parser.parse_args(argv)

    setup_logging()
    log = get_logger("l2_schedule_check")

    schedule = L2Schedule(interval=args.interval)
    steps = args.interval * len(schedule.densities)
    overrides = [
        f"train.l2_schedule.interval={args.interval}",
        f"train.max_steps={steps}",
        "train.epochs=0",
        f"train.eval_every={args.interval}",
        *args.overrides,
    ]
    cfg = config.load_experiment(args.config, overrides, args.seed, args.out)
    cfg = cfg.model_copy(update={"name": f"{cfg.name}-l2"})
    service = ExperimentService(cfg)
    service.train()

    metrics = pd.read_csv(os.path.join(service.run_dir, METRICS_FILE))
    table = expected_rows(cfg.train.l2_schedule, service.spec.layout.total).merge(
        metrics[["step", "density", "retained"]], on="step", how="left")
    table["ok"] = table["retained"] == table["expected_retained"]
    monotone = bool(metrics["retained"].is_monotonic_decreasing)
    path = storage.write_csv(os.path.join(service.run_dir, "l2_schedule.csv"), table)

    print("\nCALENDRIER L2")
    print("=" * 60)
    print(table.to_string(index=False))
    print(f"\nPoids retenus décroissants: {monotone}")
    print(f"✓ Tableau: {path}")

    conform = bool(table["ok"].all()) and monotone
    if not conform:
        log.error(f"[{service.run_id}] calendrier L2 non conforme")
    return 0 if conform else 1


if __name__ == "__main__":
    sys.exit(main())
