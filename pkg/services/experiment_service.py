"""
Orchestration des expériences: élagage, entraînement, analyse, comparaison.

Chaque run vit dans {out_dir}/{run_id}/ où run_id = "{name}-{hash8}"; toutes
les sorties portent le hash de configuration et la graine racine.
"""
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from cells.utils import Readout, RecurrentCellSpec, initialize
from config import SEED_STREAMS, component_seed, config_hash, set_dotted, validate
from models.schemas import CompareCell, CompareConfig, ExperimentConfig
from models.sequences import SequenceDataset
from services import analysis, report, storage
from services.criteria import prune_mask, score_by_name, target_count
from services.datasets import build_manifest, load_datasets
from services.training import resume_point, train
from utils.errors import ConfigError, ContractViolation

logger = logging.getLogger(__name__)

MASK_FILE = "mask.rnnp"
PRUNE_SIDECAR = "prune.json"
RESULT_FILE = "result.json"


class ExperimentService:
    """
    Pipeline d'une expérience:
    1. Données (train / validation) et manifeste
    2. Initialisation déterministe (flux "init" et "readout")
    3. Élagage en une passe (score -> masque)
    4. Entraînement masqué, points de reprise, métriques
    5. Analyse du spectre et de la connectivité
    """

    def __init__(self, config: ExperimentConfig, run_id: Optional[str] = None):
        self.config = config
        self.hash = config_hash(config)
        self.run_id = run_id or f"{config.name}-{self.hash[:8]}"
        self.run_dir = os.path.join(config.out_dir, self.run_id)
        cell = config.cell
        self.spec = RecurrentCellSpec(cell.arch, cell.input_dim, cell.hidden_dim, cell.activation)
        self.seeds = {name: component_seed(config.seed, name) for name in SEED_STREAMS}
        self._data: Optional[Tuple[SequenceDataset, SequenceDataset]] = None

    # -------------------------------------------------------------------------
    # Entrées
    # -------------------------------------------------------------------------

    @property
    def provenance(self) -> Dict[str, Any]:
        return {"run_id": self.run_id, "config_hash": self.hash, "seed": self.config.seed}

    def datasets(self) -> Tuple[SequenceDataset, SequenceDataset]:
        if self._data is None:
            self._data = load_datasets(self.config.dataset, self.seeds["synthetic"])
        return self._data

    def initial_model(self) -> Tuple[Any, Readout]:
        init = self.config.init
        pset = initialize(self.spec, init.scheme, self.seeds["init"], init.mean, init.std)
        num_classes = self.datasets()[0].num_classes
        return pset, Readout.initialize(self.spec.hidden_dim, num_classes, self.seeds["readout"])

    def criterion_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        """Minibatch du critère: B séquences d'entraînement tirées par le flux "criterion"."""
        train_set, _ = self.datasets()
        B = min(self.config.criterion.batch_size, len(train_set))
        idx = np.sort(np.random.default_rng(self.seeds["criterion"]).permutation(len(train_set))[:B])
        return train_set.X[idx], train_set.y[idx]

    def target_k(self) -> int:
        total = self.spec.layout.total
        if self.config.keep is not None:
            if self.config.keep > total:
                raise ConfigError("nombre de poids retenus invalide",
                                  [f"keep: {self.config.keep} dépasse P={total} pour {self.spec.arch}"])
            return self.config.keep
        return target_count(self.config.sparsity, total)

    # -------------------------------------------------------------------------
    # Commandes
    # -------------------------------------------------------------------------

    def prune(self) -> Dict[str, Any]:
        """
        Calcule les scores du critère et écrit le masque.

        Returns:
            Sidecar (critère, χ, graine, K, timing en ms, connectivité, chemins)
        """
        cfg = self.config
        pset, readout = self.initial_model()
        X, y = self.criterion_batch()
        k = self.target_k()
        logger.info(f"[{self.run_id}] Élagage {cfg.criterion.name}: K={k}/{pset.c.size}")

        started = time.perf_counter()
        vector = score_by_name(
            cfg.criterion.name, self.spec, pset, X, y, cfg.criterion, readout, cfg.cell.readout_mode,
            {"approx": self.seeds["approx"], "random_score": self.seeds["random_score"]},
        )
        mask = prune_mask(vector, k, self.spec.layout, cfg.criterion.exempt_bias)
        timing_ms = 1000.0 * (time.perf_counter() - started)
        if int(mask.sum()) != k:
            raise ContractViolation(f"masque de {int(mask.sum())} poids, K={k} attendu")

        pruned = pset.with_mask(mask)
        mask_path = storage.write_params(os.path.join(self.run_dir, MASK_FILE), pruned, self.hash, "mask",
                                         {"criterion": cfg.criterion.name})
        connectivity = analysis.connectivity_stats(mask, self.spec.layout)
        sidecar = dict(
            vector.sidecar(),
            **self.provenance,
            k=k,
            total=int(pset.c.size),
            sparsity=cfg.sparsity,
            timing_ms=timing_ms,
            connectivity=connectivity.to_dict(),
            mask_path=mask_path,
        )
        storage.write_json(os.path.join(self.run_dir, PRUNE_SIDECAR), sidecar)
        logger.info(f"[{self.run_id}] Masque écrit ({timing_ms:.1f} ms): {mask_path}")
        return sidecar

    def train(self, mask_path: Optional[str] = None, resume: bool = False) -> Dict[str, Any]:
        """
        Entraîne le réseau masqué (ou dense si aucun masque).

        Args:
            mask_path: Fichier .rnnp produit par prune (None: masque plein)
            resume: Reprend au dernier point de reprise du run

        Raises:
            ConfigError: masque incompatible avec l'architecture
        """
        cfg = self.config
        train_set, val_set = self.datasets()
        pset, readout = self.initial_model()
        start = None
        if resume:
            latest = storage.latest_checkpoint(self.run_dir)
            if latest is None:
                logger.warning(f"[{self.run_id}] Aucun point de reprise, démarrage à zéro")
            else:
                start = resume_point(latest, self.spec)
        if start is None:
            if mask_path:
                _, pset = storage.read_params(mask_path, self.spec)
                logger.info(f"[{self.run_id}] Masque chargé: {mask_path} (K={pset.count})")
            metrics = os.path.join(self.run_dir, "metrics.csv")
            if os.path.exists(metrics):
                os.remove(metrics)

        chi_batch = self.criterion_batch()[0] if cfg.train.track_chi else None
        result = train(
            self.spec, pset, readout, train_set, val_set, cfg.train, self.seeds["data_order"],
            run_dir=self.run_dir, run_id=self.run_id, config_hash=self.hash, resume=start,
            chi_batch=chi_batch, chi_horizon=cfg.criterion.horizon, root_seed=cfg.seed,
        )
        final = result.history[-1] if result.history else None
        summary = dict(
            self.provenance,
            step=result.step,
            val_error=final.val_error if final else None,
            train_loss=final.train_loss if final else None,
            retained=result.params.count,
            density=result.params.density,
            checkpoint=result.checkpoints[-1] if result.checkpoints else storage.latest_checkpoint(self.run_dir),
            dataset=build_manifest(cfg.dataset),
        )
        storage.write_json(os.path.join(self.run_dir, RESULT_FILE), summary)
        return summary

    def analyze(self, checkpoint: Optional[str] = None, mask_path: Optional[str] = None,
                include_bias: bool = True, out_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Rapports de spectre et de connectivité.

        Source des paramètres: point de reprise, sinon fichier de masque, sinon
        initialisation dense.
        """
        cfg = self.config
        meta = dict(self.provenance)
        if checkpoint:
            header, pset = storage.read_params(os.path.join(checkpoint, "params.rnnp"), self.spec)
            meta["step"] = header.get("step", 0)
        elif mask_path:
            _, pset = storage.read_params(mask_path, self.spec)
            meta["step"] = 0
        else:
            pset, _ = self.initial_model()
            meta["step"] = 0

        X, _ = self.criterion_batch()
        spectrum = analysis.spectrum_scan(self.spec, pset, X, cfg.criterion.horizon, meta=meta)
        connectivity = analysis.connectivity_stats(pset, self.spec.layout, meta)

        out_dir = out_dir or os.path.join(self.run_dir, "analysis")
        paths = analysis.write_spectrum(spectrum, out_dir)
        paths["connectivity"] = storage.write_json(os.path.join(out_dir, "connectivity.json"), connectivity.to_dict())
        paths["connection_map"] = analysis.write_connection_map(pset, self.spec.layout,
                                                                os.path.join(out_dir, "connection_map.csv"),
                                                                include_bias, meta)
        logger.info(f"[{self.run_id}] Analyse écrite dans {out_dir}")
        return {"spectrum": spectrum.summary(), "connectivity": connectivity.to_dict(), "paths": paths}

    def init_report(self, criteria: Tuple[str, ...] = ("jacobian", "snip"),
                    out_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Spectre et connectivité à l'initialisation.

        Mesure σ des Jacobiennes temporelles du réseau dense, puis le ratio I/R,
        la part max d'une porte et les rôles vides du masque top-K de chaque
        critère, tous calculés sur le même minibatch et la même initialisation.
        """
        cfg = self.config
        layout = self.spec.layout
        pset, readout = self.initial_model()
        X, y = self.criterion_batch()
        k = self.target_k()
        seeds = {"approx": self.seeds["approx"], "random_score": self.seeds["random_score"]}
        spectrum = analysis.spectrum_scan(self.spec, pset, X, cfg.criterion.horizon, meta=dict(self.provenance, step=0))

        reports = {"dense": analysis.connectivity_stats(pset, layout)}
        for name in criteria:
            criterion = cfg.criterion.model_copy(update={"name": name})
            vector = score_by_name(name, self.spec, pset, X, y, criterion, readout, cfg.cell.readout_mode, seeds)
            reports[name] = analysis.connectivity_stats(prune_mask(vector, k, layout, criterion.exempt_bias), layout)
        connectivity = {
            label: {"ratio": r.ratio, "max_gate_share": r.max_gate_share, "retained": r.retained,
                    "missing_roles": r.missing_roles}
            for label, r in reports.items()
        }

        out_dir = out_dir or os.path.join(self.run_dir, "init")
        paths = analysis.write_spectrum(spectrum, out_dir)
        payload = dict(self.provenance, k=k, spectrum=spectrum.summary(), connectivity=connectivity)
        paths["report"] = storage.write_json(os.path.join(out_dir, "init_report.json"), payload)
        logger.info(f"[{self.run_id}] Initialisation: σ moyen {spectrum.mean_sigma:.4f}, "
                    + ", ".join(f"I/R {label}={r.ratio:.4f}" for label, r in reports.items()))
        return dict(payload, paths=paths)


# =============================================================================
# COMPARAISON
# =============================================================================

def cell_config(base: ExperimentConfig, cell: CompareCell) -> ExperimentConfig:
    """Configuration d'une case: critère, graine et surcharges pointées sur la base."""
    doc = base.model_dump(mode="json")
    doc["criterion"]["name"] = cell.criterion
    doc["seed"] = cell.seed
    doc["name"] = f"{base.name}-{cell.key}-s{cell.seed}"
    for key, value in cell.overrides.items():
        set_dotted(doc, key, value)
    return validate(ExperimentConfig, doc)


def run_cell(config: ExperimentConfig, key: str) -> Dict[str, Any]:
    """
    Élague puis entraîne une case; relit le résultat si le run existe déjà.

    Les erreurs sont journalisées et renvoyées (status "failed").
    """
    service = ExperimentService(config)
    row = {"key": key, "criterion": config.criterion.name, "seed": config.seed, "run_id": service.run_id,
           "config_hash": service.hash}
    result_path = os.path.join(service.run_dir, RESULT_FILE)
    sidecar_path = os.path.join(service.run_dir, PRUNE_SIDECAR)
    try:
        if os.path.exists(result_path) and os.path.exists(sidecar_path):
            result, sidecar = storage.read_json(result_path), storage.read_json(sidecar_path)
            if result.get("config_hash") == service.hash:
                logger.info(f"[{service.run_id}] Résultat existant relu")
            else:
                result = None
        else:
            result = None
        if result is None:
            sidecar = service.prune()
            result = service.train(sidecar["mask_path"])
        connectivity = sidecar.get("connectivity", {})
        row.update(status="ok", val_error=result.get("val_error"), ratio=connectivity.get("ratio"),
                   max_gate_share=connectivity.get("max_gate_share"),
                   empty_roles=len(connectivity["missing_roles"]) if "missing_roles" in connectivity else None,
                   retained=result.get("retained"),
                   timing_ms=sidecar.get("timing_ms"))
    except Exception as e:
        logger.exception(f"[{service.run_id}] Échec de la case {key}")
        row.update(status="failed", error=str(e))
    return row


def _run_cell_job(args: Tuple[Dict[str, Any], str]) -> Dict[str, Any]:
    doc, key = args
    return run_cell(ExperimentConfig.model_validate(doc), key)


def run_compare(cfg: CompareConfig) -> Dict[str, Any]:
    """
    Exécute la matrice de comparaison et écrit le tableau de synthèse.

    Les cases sont indépendantes; avec workers > 1 elles partent dans un pool
    de processus. L'ordre du tableau suit l'ordre des cases.
    """
    cells = cfg.expand()
    if not cells:
        raise ConfigError("matrice de comparaison vide", ["criteria/seeds, cells: aucune case"])
    jobs = [(cell_config(cfg.base, cell).model_dump(mode="json"), cell.key) for cell in cells]
    compare_hash = config_hash(cfg)
    logger.info(f"Comparaison {compare_hash}: {len(jobs)} runs, {cfg.workers} processus")

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            runs: List[Dict[str, Any]] = list(pool.map(_run_cell_job, jobs))
    else:
        runs = [_run_cell_job(job) for job in jobs]

    out_dir = os.path.join(cfg.base.out_dir, f"compare-{compare_hash[:8]}")
    paths = report.write_summary(out_dir, runs, {"config_hash": compare_hash, "cells": len(jobs)})
    summary = report.summarize_runs(runs, compare_hash)
    return {"config_hash": compare_hash, "runs": runs, "summary": summary, "paths": paths}
