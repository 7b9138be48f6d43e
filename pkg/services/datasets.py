"""
Jeux de données: MNIST séquentiel, tâches synthétiques, distribution
approchée D̃ et manifeste des fichiers.
"""
import hashlib
import logging
import os
from typing import Any, Dict, Tuple

import numpy as np

from models.schemas import ApproxDistribution, DatasetSpec, SyntheticSpec
from models.sequences import SequenceDataset
from parsers import mnist
from utils.errors import ContractViolation, DataError

logger = logging.getLogger(__name__)


# =============================================================================
# DISTRIBUTION APPROCHÉE
# =============================================================================

def sample_approx(dist: ApproxDistribution, count: int, seed: int,
                  seq_len: int = None, input_dim: int = None) -> np.ndarray:
    """
    Tire P séquences gaussiennes i.i.d. de D̃.

    Args:
        dist: Distribution (mean, std = écart-type)
        count: P
        seed: Graine
        seq_len, input_dim: S et D si absents de dist

    Returns:
        Tableau (P, S, D)
    """
    S = dist.seq_len or seq_len
    D = dist.input_dim or input_dim
    if count < 1:
        raise ContractViolation("sample_approx: P doit être >= 1")
    if not S or not D:
        raise ContractViolation("sample_approx: S et D doivent être connus")
    rng = np.random.default_rng(seed)
    return rng.normal(dist.mean, dist.std, size=(count, S, D))


# =============================================================================
# TÂCHES SYNTHÉTIQUES
# =============================================================================

def _last_step_class(spec: SyntheticSpec, rng: np.random.Generator) -> SequenceDataset:
    M, S, D, C = spec.count, spec.seq_len, spec.input_dim, spec.num_classes
    if C > 2 and C > D:
        raise ContractViolation(f"last_step_class: {C} classes pour D={D} canaux")
    y = rng.integers(0, C, size=M)
    X = rng.normal(0.0, spec.noise, size=(M, S, D))
    if C == 2:
        # canal 0 décalé de ±1 au dernier pas selon la classe
        X[:, -1, 0] += 2.0 * y - 1.0
    else:
        X[np.arange(M), -1, y] += 1.0
    return SequenceDataset(X, y, C, "synthetic", "last", {"task": "last_step_class"})


def _copy_memory(spec: SyntheticSpec, rng: np.random.Generator) -> SequenceDataset:
    M, S, C, L = spec.count, spec.seq_len, spec.num_classes, spec.memory_len
    D = C + 1
    symbols = rng.integers(0, C, size=(M, L))
    X = np.zeros((M, S, D))
    for k in range(L):
        X[np.arange(M), k, symbols[:, k]] = 1.0
    # délimiteur juste avant la fenêtre de rappel
    X[:, S - L - 1, C] = 1.0
    y = -np.ones((M, S), dtype=np.int64)
    y[:, S - L:] = symbols
    return SequenceDataset(X, y, C, "synthetic", "all", {"task": "copy_memory"})


def synthetic_task(spec: SyntheticSpec, seed: int) -> SequenceDataset:
    """
    Génère une tâche synthétique déterministe.

    - last_step_class: bruit N(0, noise), la classe est lisible au dernier pas
      (canal 0 décalé de ±1 pour 2 classes, canal y décalé de +1 sinon)
    - copy_memory: memory_len symboles one-hot au début, délimiteur, puis
      les cibles des memory_len derniers pas recopient le préfixe
    """
    rng = np.random.default_rng(seed)
    if spec.kind == "last_step_class":
        return _last_step_class(spec, rng)
    return _copy_memory(spec, rng)


def split_dataset(dataset: SequenceDataset, validation_fraction: float, seed: int) -> Tuple[SequenceDataset, SequenceDataset]:
    """Partition disjointe et exhaustive (permutation déterministe)."""
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = len(dataset) - max(1, int(round(validation_fraction * len(dataset))))
    if cut < 1:
        raise DataError(f"jeu trop petit ({len(dataset)}) pour une validation de {validation_fraction}")
    return dataset.subset(np.sort(order[:cut]), "train"), dataset.subset(np.sort(order[cut:]), "validation")


def load_datasets(spec: DatasetSpec, seed: int) -> Tuple[SequenceDataset, SequenceDataset]:
    """
    Construit (train, validation) depuis la configuration.

    Raises:
        DataError: racine MNIST absente ou fichiers illisibles
    """
    if spec.kind == "synthetic":
        full = synthetic_task(spec.synthetic, seed)
        train, validation = split_dataset(full, spec.synthetic.validation_fraction, seed)
        if spec.train_limit:
            train = train.subset(np.arange(min(spec.train_limit, len(train))))
        if spec.validation_limit:
            validation = validation.subset(np.arange(min(spec.validation_limit, len(validation))))
        logger.info(f"Tâche synthétique {spec.synthetic.kind}: {len(train)} train, {len(validation)} validation")
        return train, validation
    if not spec.root:
        raise DataError("racine MNIST non configurée (dataset.root ou RNNPRUNE_DATA_ROOT)")
    if not os.path.isdir(spec.root):
        raise DataError(f"racine MNIST introuvable: {spec.root}")
    return mnist.load_mnist(spec.root, spec.validation_size, spec.train_limit, spec.validation_limit)


# =============================================================================
# MANIFESTE
# =============================================================================

def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(spec: DatasetSpec) -> Dict[str, Any]:
    """
    Manifeste JSON-ready: fichiers, sommes SHA-256 et spécification des partitions.
    """
    manifest: Dict[str, Any] = {
        "kind": spec.kind,
        "split": {
            "validation_size": spec.validation_size,
            "train_limit": spec.train_limit,
            "validation_limit": spec.validation_limit,
        },
        "files": [],
    }
    if spec.kind == "synthetic":
        manifest["synthetic"] = spec.synthetic.model_dump(mode="json")
        return manifest
    if not spec.root or not os.path.isdir(spec.root):
        raise DataError(f"racine MNIST introuvable: {spec.root}")
    for name in sorted(os.listdir(spec.root)):
        path = os.path.join(spec.root, name)
        if os.path.isfile(path) and "idx" in name:
            manifest["files"].append({"name": name, "bytes": os.path.getsize(path), "sha256": sha256_file(path)})
    return manifest
