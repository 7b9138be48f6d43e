"""
Stockage des artefacts: fichiers .rnnp (paramètres + masque), points de
reprise, rapports CSV/JSON.

Format .rnnp (octet pour octet identique pour des entrées identiques):
    4 octets   magic "RNNP"
    u32 LE     longueur L de l'en-tête
    L octets   en-tête JSON UTF-8 (clés triées), dont "arrays": liste
               {name, dtype, shape, nbytes} dans l'ordre du contenu
    contenu    f8 little-endian, ou bits compactés (numpy.packbits) pour les masques

Structure d'un run:
    {out_dir}/{run_id}/mask.rnnp, prune.json, metrics.csv, result.json
    {out_dir}/{run_id}/checkpoints/step_XXXXXXXX/{params.rnnp, optimizer.rnnp, meta.json}
"""
import json
import logging
import os
import struct
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from cells.utils import LAYOUT_VERSION, MaskedParameterSet, Readout, RecurrentCellSpec
from services.optimizer import AdamState
from utils.data_cleaning import sanitize_for_json, sanitize_value
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

MAGIC = b"RNNP"
CHECKPOINT_DIR = "checkpoints"


# =============================================================================
# CONTENEUR BINAIRE
# =============================================================================

def encode_container(header: Dict[str, Any], arrays: List[Tuple[str, str, np.ndarray]]) -> bytes:
    """
    Sérialise un en-tête et des tableaux nommés.

    Args:
        header: Métadonnées JSON
        arrays: (nom, "f8" | "bits", tableau)
    """
    payload = []
    entries = []
    for name, dtype, values in arrays:
        values = np.asarray(values)
        if dtype == "f8":
            raw = values.astype("<f8").tobytes()
        elif dtype == "bits":
            raw = np.packbits(values.astype(np.uint8).reshape(-1)).tobytes()
        else:
            raise ValueError(f"dtype de conteneur inconnu: {dtype}")
        entries.append({"name": name, "dtype": dtype, "shape": list(values.shape), "nbytes": len(raw)})
        payload.append(raw)
    head = json.dumps(dict(header, arrays=entries), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(payload)


def decode_container(data: bytes, source: str = "<bytes>") -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Inverse de encode_container; DataError si le contenu est invalide ou tronqué."""
    if data[:4] != MAGIC:
        raise DataError(f"{source}: magic {data[:4]!r} invalide (attendu {MAGIC!r})")
    if len(data) < 8:
        raise DataError(f"{source}: en-tête tronqué")
    (length,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{source}: en-tête JSON illisible ({e})") from e
    arrays: Dict[str, np.ndarray] = {}
    offset = 8 + length
    for entry in header.get("arrays", []):
        raw = data[offset:offset + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise DataError(f"{source}: tableau {entry['name']} tronqué ({len(raw)}/{entry['nbytes']} octets)")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["dtype"] == "f8":
            values = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        else:
            values = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:count].reshape(shape)
        arrays[entry["name"]] = values
        offset += entry["nbytes"]
    return header, arrays


# =============================================================================
# PARAMÈTRES ET MASQUES
# =============================================================================

def _spec_header(spec: RecurrentCellSpec) -> Dict[str, Any]:
    return dict(spec.to_dict(), layout_version=LAYOUT_VERSION)


def encode_params(pset: MaskedParameterSet, config_hash: str = "", kind: str = "params",
                  extra: Optional[Dict[str, Any]] = None) -> bytes:
    header = dict(_spec_header(pset.spec), seed=pset.seed, config_hash=config_hash, kind=kind,
                  count=pset.count, **(extra or {}))
    return encode_container(header, [("w", "f8", pset.w), ("mask", "bits", pset.c)])


def check_layout(header: Dict[str, Any], expected: RecurrentCellSpec, source: str = "") -> None:
    """
    Vérifie qu'un fichier correspond à l'architecture attendue.

    Raises:
        ConfigError: résumé des différences (champ: fichier != attendu)
    """
    wanted = _spec_header(expected)
    diffs = [f"{k}: {header.get(k)!r} != {v!r}" for k, v in sorted(wanted.items()) if header.get(k) != v]
    if diffs:
        raise ConfigError(f"disposition de paramètres incompatible {source}".strip(), diffs)


def decode_params(data: bytes, expected: Optional[RecurrentCellSpec] = None,
                  source: str = "<bytes>") -> Tuple[Dict[str, Any], MaskedParameterSet]:
    header, arrays = decode_container(data, source)
    if header.get("layout_version") != LAYOUT_VERSION:
        raise ConfigError(f"{source}: version de disposition {header.get('layout_version')} non supportée",
                          [f"layout_version: {header.get('layout_version')!r} != {LAYOUT_VERSION!r}"])
    if expected is not None:
        check_layout(header, expected, source)
    spec = RecurrentCellSpec(header["arch"], header["input_dim"], header["hidden_dim"], header["activation"])
    pset = MaskedParameterSet(spec, arrays["w"], arrays["mask"], header.get("seed"))
    if pset.count != header.get("count"):
        raise DataError(f"{source}: {pset.count} poids retenus, en-tête: {header.get('count')}")
    return header, pset


def write_params(path: str, pset: MaskedParameterSet, config_hash: str = "", kind: str = "params",
                 extra: Optional[Dict[str, Any]] = None) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_params(pset, config_hash, kind, extra))
    return path


def read_params(path: str, expected: Optional[RecurrentCellSpec] = None) -> Tuple[Dict[str, Any], MaskedParameterSet]:
    if not os.path.exists(path):
        raise DataError(f"fichier de paramètres introuvable: {path}")
    with open(path, "rb") as f:
        return decode_params(f.read(), expected, path)


# =============================================================================
# POINTS DE REPRISE
# =============================================================================

def checkpoint_path(run_dir: str, step: int) -> str:
    return os.path.join(run_dir, CHECKPOINT_DIR, f"step_{step:08d}")


def save_checkpoint(run_dir: str, step: int, pset: MaskedParameterSet, readout: Readout,
                    state: AdamState, meta: Dict[str, Any], config_hash: str = "") -> str:
    """
    Écrit step_XXXXXXXX/ (params.rnnp, optimizer.rnnp, meta.json).

    Returns:
        Chemin du répertoire
    """
    path = checkpoint_path(run_dir, step)
    os.makedirs(path, exist_ok=True)
    write_params(os.path.join(path, "params.rnnp"), pset, config_hash, "checkpoint", {"step": step})
    arrays = [("readout.weight", "f8", readout.weight), ("readout.bias", "f8", readout.bias)]
    for name in sorted(state.m):
        arrays.append((f"m.{name}", "f8", state.m[name]))
        arrays.append((f"v.{name}", "f8", state.v[name]))
    with open(os.path.join(path, "optimizer.rnnp"), "wb") as f:
        f.write(encode_container({"kind": "optimizer", "t": state.t, "step": step,
                                  "config_hash": config_hash}, arrays))
    write_json(os.path.join(path, "meta.json"), dict(meta, step=step, config_hash=config_hash))
    logger.info(f"Point de reprise écrit: {path}")
    return path


def load_checkpoint(path: str, expected: Optional[RecurrentCellSpec] = None):
    """
    Relit un point de reprise.

    Returns:
        (MaskedParameterSet, Readout, AdamState, meta)
    """
    _, pset = read_params(os.path.join(path, "params.rnnp"), expected)
    opt_path = os.path.join(path, "optimizer.rnnp")
    if not os.path.exists(opt_path):
        raise DataError(f"état d'optimiseur introuvable: {opt_path}")
    with open(opt_path, "rb") as f:
        header, arrays = decode_container(f.read(), opt_path)
    readout = Readout(arrays.pop("readout.weight"), arrays.pop("readout.bias"))
    m = {k[2:]: a for k, a in arrays.items() if k.startswith("m.")}
    v = {k[2:]: a for k, a in arrays.items() if k.startswith("v.")}
    with open(os.path.join(path, "meta.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    return pset, readout, AdamState(m, v, int(header["t"])), meta


def latest_checkpoint(run_dir: str) -> Optional[str]:
    root = os.path.join(run_dir, CHECKPOINT_DIR)
    if not os.path.isdir(root):
        return None
    steps = sorted(d for d in os.listdir(root) if d.startswith("step_"))
    return os.path.join(root, steps[-1]) if steps else None


# =============================================================================
# RAPPORTS
# =============================================================================

def write_json(path: str, payload: Any) -> str:
    """JSON trié, NaN/Inf remplacés par null."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(sanitize_value(payload), sort_keys=True, indent=2, ensure_ascii=False))
        f.write("\n")
    return path


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: str, df: pd.DataFrame) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def append_csv(path: str, rows: List[Dict[str, Any]], columns: List[str]) -> str:
    """Ajoute des lignes à un CSV (en-tête écrit à la création seulement)."""
    if not rows:
        return path
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df = pd.DataFrame(sanitize_for_json(pd.DataFrame(rows, columns=columns)), columns=columns)
    header = not os.path.exists(path)
    df.to_csv(path, mode="a", header=header, index=False, lineterminator="\n", float_format="%.10g")
    return path
