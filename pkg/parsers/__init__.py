"""
Parsers des formats de données.

- idx: format binaire IDX (gzip accepté), tous types d'éléments
- mnist: MNIST séquentiel ligne par ligne, validation retenue

Usage:
    from parsers import idx, mnist

    images = idx.parse_idx(blob)
    train, validation = mnist.load_mnist("/data/mnist", train_limit=10000)
"""

from parsers import idx
from parsers import mnist

__all__ = [
    "idx",
    "mnist",
]
