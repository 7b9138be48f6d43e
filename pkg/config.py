"""
Configuration: chargement YAML, surcharges, hash et graines par composant.

Priorité: fichier YAML < options CLI (--seed, --out, --set a.b=v) ;
RNNPRUNE_DATA_ROOT remplace la racine des données.
"""
import copy
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, Optional, Type, TypeVar

import numpy as np
import yaml
from pydantic import BaseModel, ValidationError

from models.schemas import CompareConfig, ExperimentConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)

SEED_STREAMS = ("init", "readout", "data_order", "criterion", "approx", "random_score", "synthetic")


def get_data_root(default: Optional[str] = None) -> Optional[str]:
    """
    Racine des jeux de données.
    Priorité: 1) RNNPRUNE_DATA_ROOT, 2) valeur de la config.
    """
    return os.environ.get("RNNPRUNE_DATA_ROOT") or default


def load_document(path: str) -> Dict[str, Any]:
    """Lit un document YAML (mapping attendu)."""
    if not os.path.exists(path):
        raise ConfigError(f"fichier de configuration introuvable: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"YAML invalide dans {path}: {e}") from e
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: un mapping YAML est attendu à la racine")
    return doc


def set_dotted(doc: Dict[str, Any], key: str, value: Any) -> None:
    """Affecte doc["a"]["b"] = value pour key = "a.b" (crée les niveaux manquants)."""
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"surcharge {key}: {part} n'est pas une section")
        node = child
    node[parts[-1]] = value


def apply_overrides(doc: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """
    Applique des surcharges "a.b=valeur" (valeur interprétée en YAML).

    Returns:
        Nouveau document (l'original n'est pas modifié)
    """
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"surcharge invalide '{item}' (format attendu: cle.sous_cle=valeur)")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"surcharge {key}: valeur illisible '{raw}'") from e
        set_dotted(doc, key.strip(), value)
    return doc


def validate(model: Type[M], doc: Dict[str, Any]) -> M:
    """Valide un document; les erreurs pydantic deviennent une ConfigError avec chemins pointés."""
    try:
        return model.model_validate(doc)
    except ValidationError as e:
        problems = [
            f"{'.'.join(str(p) for p in err['loc']) or '<racine>'}: {err['msg']}"
            for err in e.errors()
        ]
        raise ConfigError(f"configuration {model.__name__} invalide", problems) from e


def _finalize(cfg: ExperimentConfig) -> ExperimentConfig:
    root = get_data_root(cfg.dataset.root)
    if root != cfg.dataset.root:
        cfg = cfg.model_copy(update={"dataset": cfg.dataset.model_copy(update={"root": root})})
    return cfg


def load_experiment(path: Optional[str] = None, overrides: Iterable[str] = (),
                    seed: Optional[int] = None, out_dir: Optional[str] = None) -> ExperimentConfig:
    """
    Charge et valide une ExperimentConfig.

    Args:
        path: Document YAML (None = valeurs par défaut)
        overrides: Surcharges pointées
        seed: Graine racine (prioritaire sur le fichier)
        out_dir: Répertoire de sortie (prioritaire sur le fichier)
    """
    doc = load_document(path) if path else {}
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if out_dir is not None:
        doc["out_dir"] = out_dir
    return _finalize(validate(ExperimentConfig, doc))


def load_compare(path: str, overrides: Iterable[str] = (), out_dir: Optional[str] = None,
                 workers: Optional[int] = None) -> CompareConfig:
    """Charge une matrice de comparaison; les surcharges s'appliquent au document entier."""
    doc = apply_overrides(load_document(path), overrides)
    if out_dir is not None:
        set_dotted(doc, "base.out_dir", out_dir)
    if workers is not None:
        doc["workers"] = workers
    cfg = validate(CompareConfig, doc)
    return cfg.model_copy(update={"base": _finalize(cfg.base)})


def canonical_json(cfg: BaseModel) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: BaseModel) -> str:
    """16 premiers caractères hexadécimaux du SHA-256 du JSON canonique."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:16]


def component_seed(root: int, name: str) -> int:
    """
    Graine dérivée pour un flux aléatoire nommé (init, data_order, criterion...).

    Les flux sont indépendants: changer l'un ne modifie pas les autres.
    """
    if name not in SEED_STREAMS:
        raise ConfigError(f"flux aléatoire inconnu: {name}")
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "big")
    return int(np.random.SeedSequence([int(root), tag]).generate_state(1)[0])
