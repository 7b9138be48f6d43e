"""
Configuration du logging pour RNNPrune.

Sortie fichier (complète, UTF-8) et console (filtrée), un seul jeu de handlers
sur le logger racine.
"""
import logging
import os
import re
from typing import Optional


LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
LOG_FILE = "rnnprune.log"


def get_log_dir() -> str:
    """Répertoire des logs: RNNPRUNE_LOG_DIR ou ./logs."""
    return os.environ.get("RNNPRUNE_LOG_DIR", "./logs")


class SafeConsoleFormatter(logging.Formatter):
    """
    Formatter console qui retire les caractères non imprimables.

    Les surrogates isolés (noms de fichiers mal décodés, par exemple)
    cassent certains terminaux.
    """
    def format(self, record):
        msg = super().format(record)
        return re.sub(r'[\ud800-\udfff]', '', msg)


def setup_logging(level: str = "INFO", log_dir: Optional[str] = None) -> logging.Logger:
    """
    Configure le logger racine.

    Args:
        level: Niveau minimal (INFO, DEBUG, ...)
        log_dir: Répertoire des logs (défaut: get_log_dir())

    Returns:
        logging.Logger: Logger racine configuré
    """
    log_dir = log_dir or get_log_dir()
    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger()
    logger.setLevel(level)

    # Nettoyage des handlers existants pour éviter les doublons
    if logger.hasHandlers():
        logger.handlers.clear()

    fh = logging.FileHandler(os.path.join(log_dir, LOG_FILE), encoding="utf-8")
    fh.setLevel(level)
    fh.setFormatter(logging.Formatter(LOG_FORMAT))

    ch = logging.StreamHandler()
    ch.setLevel(level)
    ch.setFormatter(SafeConsoleFormatter(LOG_FORMAT))

    logger.addHandler(fh)
    logger.addHandler(ch)

    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Retourne un logger (racine si name est None).

    Returns:
        logging.Logger: Logger déjà configuré par setup_logging()
    """
    return logging.getLogger(name)
