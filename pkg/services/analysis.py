"""
Diagnostics du spectre et de la connectivité.

- spectrum_scan: Jacobiennes temporelles exactes sur les U derniers pas, SVD
  Jacobi, histogramme (largeur 0.05 sur [0, 2] + débordement), χ
- connectivity_stats: poids retenus par porte et par rôle, rapport I/R
- connection_map: liste de coordonnées (row, col, gate, block) des poids retenus
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from cells.utils import MaskedParameterSet, ParameterLayout, RecurrentCellSpec, temporal_jacobian, unroll, zero_state
from diffcore.tensor import no_grad
from services import storage
from services.svd import svd_small
from utils.errors import ContractViolation, DataError

logger = logging.getLogger(__name__)

BIN_WIDTH = 0.05
HIST_RANGE = (0.0, 2.0)
NEAR_ZERO = 0.05
PROVENANCE_COLUMNS = ["config_hash", "seed"]
SPECTRUM_COLUMNS = ["step", "sequence", "t", "i", "sigma"] + PROVENANCE_COLUMNS
MAP_COLUMNS = ["row", "col", "gate", "block"]
ROLES = ("input", "recurrent", "bias")


# =============================================================================
# SPECTRE
# =============================================================================

@dataclass
class SpectrumReport:
    """
    Valeurs singulières par (séquence, pas) et résumé.

    Attributes:
        sigma: (B, U, N), trié décroissant sur le dernier axe
        steps: Indice t de chaque Jacobienne J_t (h^(t) -> h^(t+1)), même ordre que l'axe U
        chi: (1/N)·moyenne sur batch et pas de Σσ²
        histogram: Comptes par classe (la dernière est le débordement)
        bin_edges: Bornes des classes régulières
        meta: step du point de reprise, graine, hash de config
    """
    sigma: np.ndarray
    steps: List[int]
    chi: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    near_zero: float = NEAR_ZERO
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_sigma(self) -> float:
        return float(self.sigma.mean())

    @property
    def near_zero_fraction(self) -> float:
        return float((self.sigma < self.near_zero).mean())

    def summary(self) -> Dict[str, Any]:
        return {
            "mean_sigma": self.mean_sigma,
            "near_zero_fraction": self.near_zero_fraction,
            "near_zero_threshold": self.near_zero,
            "chi": self.chi,
            "max_sigma": float(self.sigma.max()),
            "sequences": int(self.sigma.shape[0]),
            "steps": list(self.steps),
            "hidden_dim": int(self.sigma.shape[-1]),
            "histogram": {
                "counts": [int(c) for c in self.histogram],
                "edges": [float(e) for e in self.bin_edges],
                "overflow": int(self.histogram[-1]),
            },
            **self.meta,
        }

    def frame(self) -> pd.DataFrame:
        """Une ligne par valeur singulière (step, sequence, t, i, sigma) et la provenance du run."""
        B, U, N = self.sigma.shape
        seq, u, i = np.meshgrid(np.arange(B), np.arange(U), np.arange(N), indexing="ij")
        return pd.DataFrame({
            "step": self.meta.get("step", 0),
            "sequence": seq.reshape(-1),
            "t": np.asarray(self.steps)[u.reshape(-1)],
            "i": i.reshape(-1),
            "sigma": self.sigma.reshape(-1),
            "config_hash": self.meta.get("config_hash"),
            "seed": self.meta.get("seed"),
        }, columns=SPECTRUM_COLUMNS)


def spectrum_histogram(sigma: np.ndarray, width: float = BIN_WIDTH, value_range=HIST_RANGE):
    """Comptes par classe de largeur `width` sur `value_range`, plus une classe de débordement."""
    lo, hi = value_range
    edges = np.linspace(lo, hi, int(round((hi - lo) / width)) + 1)
    values = np.asarray(sigma).reshape(-1)
    counts, _ = np.histogram(values[values <= hi], bins=edges)
    overflow = int((values > hi).sum())
    return np.append(counts, overflow), edges


def spectrum_scan(spec: RecurrentCellSpec, params: Any, X: np.ndarray, horizon: int,
                  near_zero: float = NEAR_ZERO, bin_width: float = BIN_WIDTH,
                  meta: Optional[Dict[str, Any]] = None) -> SpectrumReport:
    """
    SVD des Jacobiennes temporelles exactes J_{S−u}, u = 1..U.

    Args:
        spec: Architecture
        params: MaskedParameterSet ou θ plat
        X: Séquences (B, S, D)
        horizon: U (1 <= U <= S−1)

    Returns:
        SpectrumReport
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ContractViolation(f"séquences de forme {X.shape}, attendu (B, S, D)")
    B, S = X.shape[:2]
    if not 1 <= horizon <= S - 1:
        raise ContractViolation(f"horizon U={horizon} hors de [1, S-1={S - 1}]")

    with no_grad():
        states = [zero_state(spec, (B,))] + unroll(spec, params, X[:, :S - 1]).states

    sigmas, steps = [], []
    for u in range(1, horizon + 1):
        t = S - u
        J = temporal_jacobian(spec, params, X[:, t, :], states[t])
        sigmas.append(svd_small(J).sigma)
        steps.append(t)
    sigma = np.stack(sigmas, axis=1)
    chi = float(np.mean(np.sum(sigma ** 2, axis=-1)) / spec.hidden_dim)
    counts, edges = spectrum_histogram(sigma, bin_width)
    report = SpectrumReport(sigma, steps, chi, counts, edges, near_zero, dict(meta or {}))
    logger.info(f"Spectre {spec.arch} N={spec.hidden_dim}: σ moyen {report.mean_sigma:.4f}, "
                f"{100 * report.near_zero_fraction:.1f}% < {near_zero}, χ={chi:.6g}")
    return report


def scan_checkpoint(checkpoint_dir: str, spec: RecurrentCellSpec, X: np.ndarray, horizon: int,
                    **kwargs) -> SpectrumReport:
    """spectrum_scan sur les paramètres d'un point de reprise (step et hash en métadonnées)."""
    header, pset = storage.read_params(os.path.join(checkpoint_dir, "params.rnnp"), spec)
    meta = {"step": header.get("step", 0), "seed": header.get("seed"), "config_hash": header.get("config_hash")}
    meta.update(kwargs.pop("meta", {}) or {})
    return spectrum_scan(spec, pset, X, horizon, meta=meta, **kwargs)


def write_spectrum(report: SpectrumReport, out_dir: str, prefix: str = "spectrum") -> Dict[str, str]:
    csv_path = storage.write_csv(os.path.join(out_dir, f"{prefix}.csv"), report.frame())
    json_path = storage.write_json(os.path.join(out_dir, f"{prefix}.json"), report.summary())
    return {"csv": csv_path, "json": json_path}


# =============================================================================
# CONNECTIVITÉ
# =============================================================================

@dataclass
class ConnectivityReport:
    """
    Poids retenus par porte et par rôle.

    Attributes:
        per_gate: {porte: {"input", "recurrent", "bias", "total", "share"}}
        ratio: retenus "input" / retenus "recurrent" (inf si aucun récurrent)
        recurrent_empty: Aucun poids récurrent retenu
        missing_roles: Couples "porte.rôle" sans aucun poids retenu
    """
    per_gate: Dict[str, Dict[str, float]]
    input_count: int
    recurrent_count: int
    bias_count: int
    retained: int
    total: int
    ratio: float
    recurrent_empty: bool
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def max_gate_share(self) -> float:
        return max((g["share"] for g in self.per_gate.values()), default=0.0)

    @property
    def missing_roles(self) -> List[str]:
        return [f"{gate}.{role}" for gate, counts in self.per_gate.items()
                for role in ROLES if int(counts[role]) == 0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_gate": self.per_gate,
            "input": self.input_count,
            "recurrent": self.recurrent_count,
            "bias": self.bias_count,
            "retained": self.retained,
            "total": self.total,
            # inf -> null en JSON, signalé par recurrent_empty
            "ratio": self.ratio,
            "recurrent_empty": self.recurrent_empty,
            "max_gate_share": self.max_gate_share,
            "missing_roles": self.missing_roles,
            **self.meta,
        }


def connectivity_stats(mask: Any, layout: ParameterLayout, meta: Optional[Dict[str, Any]] = None) -> ConnectivityReport:
    """
    Comptes par porte et par rôle, rapport I/R.

    Args:
        mask: Masque (longueur P) ou MaskedParameterSet
        layout: Disposition des paramètres
    """
    c = np.asarray(mask.c if isinstance(mask, MaskedParameterSet) else mask).astype(bool)
    if c.shape != (layout.total,):
        raise ContractViolation(f"masque de longueur {c.size}, disposition de {layout.total} paramètres")
    retained = int(c.sum())
    per_gate: Dict[str, Dict[str, float]] = {}
    for gid, gate in enumerate(layout.gates):
        in_gate = c & (layout.gate_ids == gid)
        counts = {role: int((in_gate & layout.role_mask(role)).sum()) for role in ROLES}
        total = sum(counts.values())
        per_gate[gate] = dict(counts, total=total, share=total / retained if retained else 0.0)

    n_in = sum(int(g["input"]) for g in per_gate.values())
    n_rec = sum(int(g["recurrent"]) for g in per_gate.values())
    n_bias = sum(int(g["bias"]) for g in per_gate.values())
    empty = n_rec == 0
    ratio = math.inf if empty else n_in / n_rec
    if empty:
        logger.warning("Aucun poids récurrent retenu: rapport I/R infini")
    return ConnectivityReport(per_gate, n_in, n_rec, n_bias, retained, layout.total, ratio, empty, dict(meta or {}))


def gate_share_table(reports: Dict[str, ConnectivityReport]) -> pd.DataFrame:
    """Tableau (méthode, porte, rôle, retenus, part) pour comparer plusieurs masques."""
    rows = []
    for label, report in reports.items():
        for gate, counts in report.per_gate.items():
            for role in ROLES:
                rows.append({
                    "method": label,
                    "gate": gate,
                    "role": role,
                    "retained": int(counts[role]),
                    "share": counts[role] / report.retained if report.retained else 0.0,
                    "ratio": report.ratio,
                })
    return pd.DataFrame(rows, columns=["method", "gate", "role", "retained", "share", "ratio"])


# =============================================================================
# CARTE DES CONNEXIONS
# =============================================================================

def connection_map(mask: Any, layout: ParameterLayout, include_bias: bool = True) -> pd.DataFrame:
    """
    Coordonnées des poids retenus.

    Lignes: entrée d -> d, récurrent h_i -> D + i, peephole -> D + N, biais -> -1.
    Colonnes: sortie aplatie sur les portes, gate_id·N + j.
    Sans `include_bias`, la carte ne relit qu'un masque aux biais nuls.
    """
    c = np.asarray(mask.c if isinstance(mask, MaskedParameterSet) else mask).astype(bool)
    if c.shape != (layout.total,):
        raise ContractViolation(f"masque de longueur {c.size}, disposition de {layout.total} paramètres")
    D, N = layout.spec.input_dim, layout.spec.hidden_dim
    frames = []
    for b in layout.blocks:
        if b.role == "bias" and not include_bias:
            continue
        local = np.flatnonzero(c[b.offset:b.stop])
        if b.kind in ("input", "recurrent"):
            r, j = np.divmod(local, N)
            rows = r if b.kind == "input" else D + r
        elif b.kind == "peephole":
            rows, j = np.full(local.size, D + N), local
        else:
            rows, j = np.full(local.size, -1), local
        frames.append(pd.DataFrame({"row": rows, "col": b.gate_id * N + j, "gate": b.gate, "block": b.name},
                                   columns=MAP_COLUMNS))
    if not frames:
        return pd.DataFrame(columns=MAP_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def import_connection_map(df: pd.DataFrame, layout: ParameterLayout) -> np.ndarray:
    """Reconstruit le masque à partir d'une carte (les biais absents de la carte sont à 0)."""
    D, N = layout.spec.input_dim, layout.spec.hidden_dim
    mask = np.zeros(layout.total, dtype=np.uint8)
    for name, group in df.groupby("block", sort=False):
        try:
            b = layout.block(str(name))
        except KeyError:
            raise DataError(f"bloc inconnu dans la carte de connexions: {name}") from None
        rows = group["row"].to_numpy(dtype=np.int64)
        j = group["col"].to_numpy(dtype=np.int64) - b.gate_id * N
        if b.kind == "input":
            local = rows * N + j
        elif b.kind == "recurrent":
            local = (rows - D) * N + j
        else:
            local = j
        if local.size and (local.min() < 0 or local.max() >= b.size):
            raise DataError(f"coordonnées hors du bloc {b.name}")
        mask[b.offset + local] = 1
    return mask


def write_connection_map(mask: Any, layout: ParameterLayout, path: str, include_bias: bool = True,
                         meta: Optional[Dict[str, Any]] = None) -> str:
    """Écrit la carte avec la provenance du run (config_hash, seed) sur chaque ligne."""
    df = connection_map(mask, layout, include_bias)
    for column in PROVENANCE_COLUMNS:
        df[column] = (meta or {}).get(column)
    return storage.write_csv(path, df)


def read_connection_map(path: str, layout: ParameterLayout) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"carte de connexions introuvable: {path}")
    return import_connection_map(pd.read_csv(path), layout)
