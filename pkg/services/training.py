"""
Entraînement masqué d'un réseau récurrent élagué.

- perte: entropie croisée au dernier pas (ou sur les pas ciblés en mode "all")
- Adam masqué (services.optimizer), projection θ ← c ⊙ θ après chaque pas
- ordre des données: permutation déterministe de (seed, epoch)
- élagage L2 itératif optionnel (densités décroissantes tous les `interval` pas)
- audit de K-sparsité à chaque évaluation, CSV de métriques en ajout
"""
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from cells.utils import MaskedParameterSet, Readout, RecurrentCellSpec, predict, sequence_loss, unroll
from diffcore.api import grad
from diffcore.functional import log_softmax
from diffcore.tensor import no_grad
from models.schemas import L2Schedule, TrainConfig, TrainMetrics
from models.sequences import SequenceDataset
from services import storage
from services.criteria import chi_estimate, top_k_mask
from services.optimizer import AdamState, adam_step, clip_by_global_norm
from utils.errors import ContractViolation, NumericFailure

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
METRIC_COLUMNS = list(TrainMetrics.model_fields.keys())


@dataclass
class TrainResult:
    """Historique des métriques et état final."""
    history: List[TrainMetrics]
    params: MaskedParameterSet
    readout: Readout
    state: AdamState
    step: int
    checkpoints: List[str] = field(default_factory=list)


@dataclass
class ResumePoint:
    """État relu d'un point de reprise."""
    params: MaskedParameterSet
    readout: Readout
    state: AdamState
    step: int
    loss_sum: float = 0.0
    loss_count: int = 0
    expected_k: Optional[int] = None


# =============================================================================
# PERTE ET ÉVALUATION
# =============================================================================

def loss_and_grads(spec: RecurrentCellSpec, theta: np.ndarray, readout: Readout, X: np.ndarray, y: np.ndarray,
                   mode: str = "last"):
    """
    Perte du minibatch et gradients (θ récurrent, poids et biais de sortie).

    Returns:
        (perte, {"theta", "readout.weight", "readout.bias"}, nan_count)
    """
    def loss(th, weight, bias):
        return sequence_loss(spec, th, readout, X, y, mode, readout_params=(weight, bias))

    result = grad(loss, [theta, readout.weight, readout.bias])
    g_theta, g_weight, g_bias = result.derivatives
    return float(result.value), {"theta": g_theta, "readout.weight": g_weight, "readout.bias": g_bias}, result.nan_count


def evaluate(spec: RecurrentCellSpec, params: MaskedParameterSet, readout: Readout, dataset: SequenceDataset,
             limit: Optional[int] = None, batch_size: int = 256) -> Dict[str, float]:
    """
    Erreur top-1 (%) et perte moyenne sur un jeu.

    Mode "last": prédiction au dernier pas. Mode "all": pas ciblés (y >= 0).
    """
    n = len(dataset) if limit is None else min(limit, len(dataset))
    if n == 0:
        raise ContractViolation("évaluation sur un jeu vide")
    errors, total, loss_sum = 0, 0, 0.0
    subset = dataset.subset(np.arange(n))
    for X, y in subset.batches(batch_size):
        if dataset.target_mode == "last":
            logp = predict(spec, params, readout, X)
            errors += int((logp.argmax(axis=-1) != y).sum())
            loss_sum += float(-logp[np.arange(len(y)), y].sum())
            total += len(y)
            continue
        with no_grad():
            outputs = unroll(spec, params, X, readout, mode="all").outputs
            # (B, S, C)
            logp = np.stack([log_softmax(o).data for o in outputs], axis=1)
        valid = y >= 0
        targets = np.where(valid, y, 0)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        errors += int((logp.argmax(axis=-1)[valid] != y[valid]).sum())
        loss_sum += float(-picked[valid].sum())
        total += int(valid.sum())
    if total == 0:
        raise ContractViolation("aucun pas ciblé dans le jeu d'évaluation")
    val_loss = loss_sum / total
    return {"val_error": 100.0 * errors / total, "val_loss": val_loss}


# =============================================================================
# ÉLAGAGE L2 ITÉRATIF
# =============================================================================

def schedule_density(schedule: L2Schedule, step: int) -> Optional[float]:
    """Densité cible si `step` est une frontière du calendrier, sinon None."""
    if step <= 0 or step % schedule.interval:
        return None
    k = step // schedule.interval
    if k > len(schedule.densities):
        return None
    return schedule.densities[k - 1]


def l2_schedule_prune(params: MaskedParameterSet, schedule: L2Schedule, step: int) -> np.ndarray:
    """
    Nouveau masque à une frontière du calendrier.

    Garde ⌈d·P⌉ poids de plus grande magnitude parmi ceux déjà retenus;
    les masques sont décroissants (aucune résurrection).

    Raises:
        ContractViolation: step n'est pas une frontière
    """
    density = schedule_density(schedule, step)
    if density is None:
        raise ContractViolation(f"pas {step} hors des frontières du calendrier L2")
    total = params.c.size
    keep = int(math.ceil(round(density * total, 9)))
    keep = min(keep, params.count)
    scores = np.where(params.c.astype(bool), np.abs(params.w), -np.inf)
    mask = top_k_mask(scores, keep)
    logger.info(f"Élagage L2 au pas {step}: densité {density} -> {keep}/{total} poids")
    return mask


# =============================================================================
# BOUCLE D'ENTRAÎNEMENT
# =============================================================================

def _audit(params: MaskedParameterSet, expected_k: int, step: int) -> None:
    leaked = int(np.count_nonzero(params.w[params.c == 0]))
    if params.count != expected_k or leaked:
        raise NumericFailure("violation de la K-sparsité", step=step, retained=params.count,
                             expected=expected_k, leaked=leaked)


def data_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(count)


def train(spec: RecurrentCellSpec, params: MaskedParameterSet, readout: Readout, train_set: SequenceDataset,
          val_set: SequenceDataset, config: TrainConfig, seed: int, run_dir: Optional[str] = None,
          run_id: str = "run", config_hash: str = "", resume: Optional[ResumePoint] = None,
          chi_batch: Optional[np.ndarray] = None, chi_horizon: int = 4,
          root_seed: Optional[int] = None) -> TrainResult:
    """
    Entraîne les paramètres non masqués et la couche de sortie.

    Args:
        params: Paramètres avec leur masque (K fixé sauf calendrier L2)
        readout: Couche de sortie (dense)
        train_set, val_set: Jeux d'entraînement et de validation
        config: Hyperparamètres
        seed: Graine du flux "data_order"
        run_dir: Répertoire du run (métriques et points de reprise); None = en mémoire
        resume: Point de reprise (numérotation des pas poursuivie)
        chi_batch: Séquences pour le suivi de χ (si config.track_chi)
        root_seed: Graine racine recopiée dans metrics.csv avec config_hash

    Returns:
        TrainResult

    Raises:
        NumericFailure: perte NaN, gradient non fini, K-sparsité violée
    """
    mode = train_set.target_mode
    M = len(train_set)
    steps_per_epoch = max(1, math.ceil(M / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps) if config.epochs else config.max_steps

    if resume is not None:
        params, readout, state = resume.params.copy(), resume.readout.copy(), resume.state.copy()
        step, loss_sum, loss_count = resume.step, resume.loss_sum, resume.loss_count
        expected_k = resume.expected_k if resume.expected_k is not None else params.count
        logger.info(f"[{run_id}] Reprise au pas {step}")
    else:
        params, readout = params.copy().apply_mask(), readout.copy()
        state = AdamState.zeros_like({"theta": params.w, "readout.weight": readout.weight,
                                      "readout.bias": readout.bias})
        step, loss_sum, loss_count = 0, 0.0, 0
        expected_k = params.count

    metrics_path = os.path.join(run_dir, METRICS_FILE) if run_dir else None
    history: List[TrainMetrics] = []
    checkpoints: List[str] = []
    started = time.perf_counter()
    logger.info(f"[{run_id}] Entraînement {spec.arch} N={spec.hidden_dim}: {total_steps} pas, "
                f"K={expected_k}/{params.c.size}")

    def log_eval():
        nonlocal loss_sum, loss_count
        _audit(params, expected_k, step)
        ev = evaluate(spec, params, readout, val_set, config.eval_limit)
        chi = None
        if config.track_chi and chi_batch is not None:
            chi = chi_estimate(spec, params, chi_batch, chi_horizon).value
        row = TrainMetrics(
            step=step,
            train_loss=loss_sum / loss_count if loss_count else None,
            val_error=ev["val_error"],
            perplexity=math.exp(min(ev["val_loss"], 700.0)) if mode == "all" else None,
            wall_ms=1000.0 * (time.perf_counter() - started),
            density=params.density,
            retained=params.count,
            chi=chi,
            config_hash=config_hash,
            seed=root_seed,
        )
        history.append(row)
        if metrics_path:
            storage.append_csv(metrics_path, [row.model_dump()], METRIC_COLUMNS)
        logger.info(f"[{run_id}] pas {step}: perte={row.train_loss}, erreur val={row.val_error:.2f}%"
                    + (f", χ={chi:.4g}" if chi is not None else ""))
        loss_sum, loss_count = 0.0, 0

    def checkpoint():
        if run_dir:
            meta = {"run_id": run_id, "loss_sum": loss_sum, "loss_count": loss_count,
                    "expected_k": expected_k, "seed": seed}
            checkpoints.append(storage.save_checkpoint(run_dir, step, params, readout, state, meta, config_hash))

    if resume is None:
        log_eval()
        checkpoint()

    while step < total_steps:
        epoch, position = divmod(step, steps_per_epoch)
        order = data_order(seed, epoch, M)
        idx = order[position * config.batch_size:(position + 1) * config.batch_size]
        X, y = train_set.X[idx], train_set.y[idx]

        loss, grads, nans = loss_and_grads(spec, params.theta, readout, X, y, mode)
        if nans or not np.isfinite(loss):
            raise NumericFailure("divergence: perte non finie", step=step + 1, loss=loss, nan_count=nans)
        if config.clip_norm is not None:
            grads, norm = clip_by_global_norm(grads, config.clip_norm)
            if norm > config.clip_norm:
                logger.warning(f"[{run_id}] écrêtage actif au pas {step + 1}: norme {norm:.4g}")

        current = {"theta": params.w, "readout.weight": readout.weight, "readout.bias": readout.bias}
        updated, state = adam_step(state, current, grads, {"theta": params.c}, config)
        params = MaskedParameterSet(spec, updated["theta"], params.c, params.seed)
        readout = Readout(updated["readout.weight"], updated["readout.bias"])
        step += 1
        loss_sum += loss
        loss_count += 1

        if config.l2_schedule is not None and schedule_density(config.l2_schedule, step) is not None:
            params = params.with_mask(l2_schedule_prune(params, config.l2_schedule, step))
            for name in ("m", "v"):
                getattr(state, name)["theta"] = getattr(state, name)["theta"] * params.c
            expected_k = params.count

        if step % config.eval_every == 0 or step == total_steps:
            log_eval()
        if (config.checkpoint_every and step % config.checkpoint_every == 0) or step == total_steps:
            checkpoint()

    return TrainResult(history, params, readout, state, step, checkpoints)


def resume_point(checkpoint_dir: str, spec: RecurrentCellSpec) -> ResumePoint:
    """Relit un point de reprise pour poursuivre un entraînement."""
    pset, readout, state, meta = storage.load_checkpoint(checkpoint_dir, spec)
    return ResumePoint(pset, readout, state, int(meta["step"]), float(meta.get("loss_sum", 0.0)),
                       int(meta.get("loss_count", 0)), meta.get("expected_k"))
