"""
MNIST séquentiel: chaque image 28×28 devient une séquence de 28 lignes
de 28 pixels, la cible étant attachée au dernier pas.
"""
import logging
import os
from typing import Optional, Tuple

import numpy as np

from models.sequences import SequenceDataset
from parsers.idx import read_idx_file
from utils.errors import ContractViolation, DataError

logger = logging.getLogger(__name__)

MNIST_SIDE = 28
NUM_CLASSES = 10

# Noms de fichiers standards (variantes .gz acceptées)
FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def sequentialize_mnist(images: np.ndarray, labels: np.ndarray, split: str = "train") -> SequenceDataset:
    """
    Présente les images ligne par ligne.

    Args:
        images: (M, 28, 28) valeurs dans [0, 1]
        labels: (M,) entiers 0..9
        split: Étiquette de partition

    Returns:
        SequenceDataset avec S = 28, D = 28; sequence[r][c] = pixel (r, c)
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 3 or images.shape[1:] != (MNIST_SIDE, MNIST_SIDE):
        raise ContractViolation(f"images de forme {images.shape}, attendu (M, 28, 28)")
    if labels.shape != images.shape[:1]:
        raise ContractViolation(f"{labels.shape[0] if labels.ndim else 0} labels pour {images.shape[0]} images")
    # Les lignes de l'image sont déjà les pas de temps: (M, S=28, D=28)
    return SequenceDataset(images.copy(), labels.astype(np.int64), NUM_CLASSES, split, "last",
                           {"source": "mnist", "normalization": "/255"})


def _find(root: str, name: str) -> str:
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        path = os.path.join(root, candidate)
        if os.path.exists(path):
            return path
    raise DataError(f"fichier MNIST introuvable: {os.path.join(root, name)}[.gz]")


def read_mnist(root: str, part: str = "train") -> Tuple[np.ndarray, np.ndarray]:
    """Lit images et labels bruts d'une partie ("train" ou "test")."""
    image_name, label_name = FILES[part]
    images = read_idx_file(_find(root, image_name), as_pixels=True)
    labels = read_idx_file(_find(root, label_name), as_pixels=False)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"MNIST {part}: {images.shape[0]} images pour {labels.shape[0]} labels")
    return images, labels


def load_mnist(root: str, validation_size: int = 10000, train_limit: Optional[int] = None,
               validation_limit: Optional[int] = None) -> Tuple[SequenceDataset, SequenceDataset]:
    """
    Charge MNIST séquentiel avec un jeu de validation retenu.

    Les `validation_size` dernières images d'entraînement forment la
    validation; les partitions sont disjointes et couvrent tout le fichier.

    Args:
        root: Répertoire contenant les fichiers IDX
        validation_size: Taille de la validation retenue
        train_limit: Garde les N premières images d'entraînement (échelle CI)
        validation_limit: Garde les N premières images de validation

    Returns:
        (train, validation)
    """
    images, labels = read_mnist(root, "train")
    if not 0 < validation_size < images.shape[0]:
        raise DataError(f"validation_size={validation_size} incompatible avec {images.shape[0]} images")
    cut = images.shape[0] - validation_size
    train = sequentialize_mnist(images[:cut][:train_limit], labels[:cut][:train_limit], "train")
    validation = sequentialize_mnist(images[cut:][:validation_limit], labels[cut:][:validation_limit], "validation")
    logger.info(f"MNIST séquentiel chargé: {len(train)} train, {len(validation)} validation ({root})")
    return train, validation
