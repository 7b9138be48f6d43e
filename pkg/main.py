"""
RNNPrune: élagage en une passe de réseaux récurrents.

Sous-commandes:
    prune    scores du critère -> masque (.rnnp) + prune.json
    train    entraînement masqué -> points de reprise + metrics.csv
    analyze  spectre des Jacobiennes temporelles + connectivité
    compare  matrice critère × graine -> tableau moyenne ± écart-type

Codes de sortie: 0 succès, 1 erreur inattendue, 2 configuration, 3 données,
4 échec numérique.

Usage:
    python main.py prune --config config/experiment.yaml --seed 1
    python main.py train --config config/experiment.yaml --mask runs/<run>/mask.rnnp
    python main.py compare --config config/compare.yaml --workers 4
"""
import argparse
import json
import sys
from typing import List, Optional

import config
from services.experiment_service import ExperimentService, run_compare
from utils.data_cleaning import sanitize_value
from utils.errors import ConfigError, ContractViolation, DataError, NumericFailure
from utils.logging import get_logger, setup_logging


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _common(parser: argparse.ArgumentParser, default_config: str) -> None:
    parser.add_argument("--config", default=default_config, help="Document YAML de l'expérience")
    parser.add_argument("--seed", type=int, default=None, help="Graine racine (prioritaire sur le fichier)")
    parser.add_argument("--out", default=None, help="Répertoire de sortie")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="CLE=VALEUR",
                        help="Surcharge pointée, répétable (ex: train.lr=0.01)")
    parser.add_argument("--log-level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnnprune", description="Élagage en une passe de réseaux récurrents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="Calcule le masque d'un critère")
    _common(p, "config/experiment.yaml")

    p = sub.add_parser("train", help="Entraîne un réseau masqué")
    _common(p, "config/experiment.yaml")
    p.add_argument("--mask", default=None, help="Fichier .rnnp (absent: réseau dense)")
    p.add_argument("--resume", action="store_true", help="Reprend au dernier point de reprise")

    p = sub.add_parser("analyze", help="Rapports de spectre et de connectivité")
    _common(p, "config/experiment.yaml")
    p.add_argument("--checkpoint", default=None, help="Répertoire step_XXXXXXXX")
    p.add_argument("--mask", default=None, help="Fichier .rnnp (si pas de point de reprise)")
    p.add_argument("--exclude-bias", dest="include_bias", action="store_false",
                   help="Carte des connexions sans les biais (non relisible si des biais sont retenus)")

    p = sub.add_parser("compare", help="Matrice de comparaison")
    _common(p, "config/compare.yaml")
    p.add_argument("--workers", type=int, default=None, help="Processus parallèles")
    return parser


def cmd_prune(args: argparse.Namespace) -> dict:
    cfg = config.load_experiment(args.config, args.overrides, args.seed, args.out)
    return ExperimentService(cfg).prune()


def cmd_train(args: argparse.Namespace) -> dict:
    cfg = config.load_experiment(args.config, args.overrides, args.seed, args.out)
    return ExperimentService(cfg).train(args.mask, args.resume)


def cmd_analyze(args: argparse.Namespace) -> dict:
    cfg = config.load_experiment(args.config, args.overrides, args.seed, args.out)
    result = ExperimentService(cfg).analyze(args.checkpoint, args.mask, args.include_bias)
    return {"spectrum": result["spectrum"], "connectivity": result["connectivity"], "paths": result["paths"]}


def cmd_compare(args: argparse.Namespace) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"base.seed={args.seed}")
    cfg = config.load_compare(args.config, overrides, args.out, args.workers)
    result = run_compare(cfg)
    return {"config_hash": result["config_hash"], "rows": result["summary"].to_dict(orient="records"),
            "paths": result["paths"]}


COMMANDS = {
    "prune": cmd_prune,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    log = get_logger()
    try:
        result = COMMANDS[args.command](args)
    except ConfigError as e:
        log.error(f"Configuration invalide: {e}")
        return EXIT_CONFIG
    except DataError as e:
        log.error(f"Erreur de données: {e}")
        return EXIT_DATA
    except (NumericFailure, ContractViolation) as e:
        log.error(f"Échec numérique: {e}")
        return EXIT_NUMERIC
    except Exception:
        log.exception(f"Erreur inattendue ({args.command})")
        return EXIT_UNEXPECTED
    print(json.dumps(sanitize_value(result), sort_keys=True, indent=2, ensure_ascii=False))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
