"""
Critères d'élagage en une passe et règle du top-K.

- chi_estimate: norme de Frobenius moyenne de la Jacobienne temporelle sur les
  U derniers pas
- jacobian_sensitivity: d_n = Σ_u |∂χ^(u)/∂θ_n| (forward-over-reverse),
  éventuellement divisé par |γ_n|
- gamma_normalizer: gradient moyen des activations cachées sur D̃
- snip_score, foresight_score, random_score, magnitude_score
- top_k_mask, target_count
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from cells.utils import (
    MaskedParameterSet,
    Readout,
    RecurrentCellSpec,
    cell_step,
    push_jacobian,
    sequence_loss,
    unroll,
    zero_state,
)
from diffcore.api import grad, grad_of_derived_scalars, hvp
from diffcore.functional import sum_of_squares
from diffcore.tensor import Tensor, as_tensor, no_grad, tsum
from models.schemas import ApproxDistribution, CriterionConfig
from services.datasets import sample_approx
from utils.errors import ContractViolation

logger = logging.getLogger(__name__)

GAMMA_EPS = 1e-12
CRITERIA = ("jacobian", "snip", "foresight", "random", "magnitude")


@dataclass
class SensitivityVector:
    """
    Scores par paramètre et provenance.

    Attributes:
        scores: d_n (float64, un par indice du vecteur plat)
        criterion: Nom du critère
        config: Instantané de la configuration du critère
        seed: Graine utilisée (None si déterministe sans aléa)
        chi: Estimation χ (critère jacobian)
        degenerate: Tous les scores sont nuls
        nan_count: NaN propagés pendant le calcul
    """
    scores: np.ndarray
    criterion: str
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    chi: Optional[float] = None
    degenerate: bool = False
    nan_count: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.degenerate = bool(self.scores.size and not np.any(self.scores))
        if self.degenerate:
            logger.warning(f"Critère {self.criterion}: tous les scores sont nuls (vecteur dégénéré)")

    def sidecar(self) -> Dict[str, Any]:
        return {
            "criterion": self.criterion,
            "config": self.config,
            "seed": self.seed,
            "chi": self.chi,
            "degenerate": self.degenerate,
            "nan_count": self.nan_count,
        }


@dataclass(frozen=True)
class ChiEstimate:
    """χ^(u) pour u = 1..U et agrégat (1/U) Σ_u χ^(u)."""
    per_step: np.ndarray
    value: float


def _theta_of(params: Any) -> np.ndarray:
    if isinstance(params, MaskedParameterSet):
        return params.theta
    return np.asarray(params, dtype=np.float64)


# =============================================================================
# χ ET SENSIBILITÉ JACOBIENNE
# =============================================================================

def chi_terms(spec: RecurrentCellSpec, theta, X: np.ndarray, horizon: int, probe: str = "frobenius") -> List[Tensor]:
    """
    Termes tracés χ^(u) = (1/N)·moyenne_batch ‖J_{S−u} P‖², u = 1..U.

    P est l'identité (frobenius, ‖J‖_F²) ou le vecteur de uns (ones_vector).
    La dépendance à θ passe par la Jacobienne et par la trajectoire h^(t).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != spec.input_dim:
        raise ContractViolation(f"séquences de forme {X.shape}, attendu (B, S, D={spec.input_dim})")
    B, S = X.shape[0], X.shape[1]
    if B == 0:
        raise ContractViolation("chi_estimate: batch vide")
    if not 1 <= horizon <= S - 1:
        raise ContractViolation(f"horizon U={horizon} hors de [1, S-1={S - 1}]")

    blocks = spec.layout.split(theta)
    # h^(1..S-1); J_{S-u} relie h^(S-u) à h^(S-u+1), entrée X[:, S-u]
    states = [zero_state(spec, (B,))]
    for t in range(S - 1):
        states.append(cell_step(spec, blocks, as_tensor(X[:, t, :]), states[-1]))

    N = spec.hidden_dim
    terms = []
    for u in range(1, horizon + 1):
        tangent = push_jacobian(spec, blocks, as_tensor(X[:, S - u, :]), states[S - u], probe)
        terms.append(sum_of_squares(tangent) / float(B * N))
    return terms


def chi_estimate(spec: RecurrentCellSpec, params: Any, X: np.ndarray, horizon: int,
                 probe: str = "frobenius") -> ChiEstimate:
    """
    Estimation de χ sur un batch de séquences.

    Returns:
        ChiEstimate: per_step[u-1] = χ^(u), value = (1/(N·U))·Σ_u E[‖J‖²]
    """
    with no_grad():
        terms = chi_terms(spec, as_tensor(_theta_of(params)), X, horizon, probe)
    per_step = np.array([t.item() for t in terms])
    return ChiEstimate(per_step, float(per_step.mean()))


def gamma_normalizer(spec: RecurrentCellSpec, params: Any, approx: ApproxDistribution,
                     sample_count: int, seed: int, seq_len: Optional[int] = None) -> np.ndarray:
    """
    γ_n = moyenne sur P séquences de D̃ de Σ_t Σ_i ∂h_i^(t)/∂θ_n.

    Args:
        approx: Distribution approchée (gaussienne)
        sample_count: P
        seed: Graine du flux "approx"
        seq_len: S si absent de approx
    """
    X = sample_approx(approx, sample_count, seed, seq_len=seq_len, input_dim=spec.input_dim)

    def activations(theta):
        states = unroll(spec, theta, X).states
        total = None
        for s in states:
            term = tsum(s.h)
            total = term if total is None else total + term
        return total / float(X.shape[0])

    result = grad(activations, [_theta_of(params)])
    return result.derivatives[0]


def apply_gamma(scores: np.ndarray, gamma: np.ndarray, eps: float = GAMMA_EPS) -> np.ndarray:
    """Divise des scores par max(|γ|, eps) (applicable à tout critère)."""
    scores = np.asarray(scores, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if scores.shape != gamma.shape:
        raise ContractViolation(f"γ de forme {gamma.shape} pour des scores {scores.shape}")
    divisor = np.abs(gamma)
    guarded = divisor < eps
    if guarded.any():
        logger.warning(f"Garde γ active sur {int(guarded.sum())} paramètres (|γ| < {eps})")
    return scores / np.maximum(divisor, eps)


def jacobian_sensitivity(spec: RecurrentCellSpec, params: Any, X: np.ndarray, config: CriterionConfig,
                         seed: Optional[int] = None, gamma: Optional[np.ndarray] = None) -> SensitivityVector:
    """
    Sensibilité de χ à chaque paramètre: d_n = Σ_u |∂χ^(u)/∂θ_n|.

    Args:
        params: Paramètres denses (avant élagage)
        X: Minibatch (B, S, D); seuls les config.batch_size premiers sont utilisés
        config: horizon U, sonde, normalisation γ
        seed: Graine du flux "approx" pour γ
        gamma: γ précalculé (sinon calculé si normalize_by_gamma)
    """
    X = np.asarray(X, dtype=np.float64)[: config.batch_size]
    theta = _theta_of(params)
    result = grad_of_derived_scalars(
        lambda th: chi_terms(spec, th, X, config.horizon, config.probe), [theta]
    )
    if result.status != "ok":
        logger.warning(f"Sensibilité jacobienne: {result.nan_count} NaN propagés")
    scores = np.zeros_like(theta)
    for (d_u,) in result.derivatives:
        scores += np.abs(d_u)
    chi = float(np.mean(result.value))

    if config.normalizes:
        if gamma is None:
            gamma = gamma_normalizer(spec, theta, config.approx, config.sample_count,
                                     seed if seed is not None else 0, seq_len=X.shape[1])
        scores = apply_gamma(scores, gamma)

    logger.info(f"Sensibilité jacobienne: χ={chi:.6g}, U={config.horizon}, sonde={config.probe}")
    return SensitivityVector(scores, "jacobian", config.model_dump(mode="json"), seed, chi,
                             nan_count=result.nan_count)


# =============================================================================
# SNIP / FORESIGHT
# =============================================================================

def snip_from_loss(loss: Callable[[Tensor], Tensor], theta: np.ndarray) -> Tuple[np.ndarray, int]:
    """Scores |θ ⊙ ∇L(θ)| pour une perte tracée quelconque."""
    result = grad(loss, [theta])
    return np.abs(theta * result.derivatives[0]), result.nan_count


def foresight_from_loss(loss: Callable[[Tensor], Tensor], theta: np.ndarray,
                        absolute: bool = False) -> Tuple[np.ndarray, int]:
    """
    Scores θ ⊙ (H g) avec g = ∇L(θ), via un seul produit Hessienne-vecteur.

    Signés par défaut (tri décroissant); absolute=True prend |θ ⊙ Hg|.
    """
    g = grad(loss, [theta])
    hv = hvp(loss, [theta], [g.derivatives[0]])
    scores = theta * hv.derivatives[0]
    return (np.abs(scores) if absolute else scores), g.nan_count + hv.nan_count


def _loss_fn(spec: RecurrentCellSpec, readout: Readout, X: np.ndarray, y: np.ndarray, mode: str):
    def loss(theta):
        return sequence_loss(spec, theta, readout, X, y, mode)
    return loss


def snip_score(spec: RecurrentCellSpec, params: Any, readout: Readout, X: np.ndarray, y: np.ndarray,
               mode: str = "last", config: Optional[CriterionConfig] = None) -> SensitivityVector:
    """SNIP: |θ_n · g_n|, g = gradient moyen de l'entropie croisée sur le minibatch."""
    theta = _theta_of(params)
    scores, nans = snip_from_loss(_loss_fn(spec, readout, X, y, mode), theta)
    return SensitivityVector(scores, "snip", config.model_dump(mode="json") if config else {}, nan_count=nans)


def foresight_score(spec: RecurrentCellSpec, params: Any, readout: Readout, X: np.ndarray, y: np.ndarray,
                    mode: str = "last", config: Optional[CriterionConfig] = None) -> SensitivityVector:
    """Foresight: θ_n · (Hg)_n sur un seul minibatch."""
    theta = _theta_of(params)
    absolute = bool(config.foresight_absolute) if config else False
    scores, nans = foresight_from_loss(_loss_fn(spec, readout, X, y, mode), theta, absolute)
    return SensitivityVector(scores, "foresight", config.model_dump(mode="json") if config else {}, nan_count=nans)


# =============================================================================
# RÉFÉRENCES SIMPLES
# =============================================================================

def random_score(count: int, seed: int) -> SensitivityVector:
    """Scores uniformes i.i.d. (déterministes par graine)."""
    rng = np.random.default_rng(seed)
    return SensitivityVector(rng.uniform(size=count), "random", {}, seed)


def magnitude_score(params: Any) -> SensitivityVector:
    """|w| (les poids déjà masqués ont un score nul)."""
    return SensitivityVector(np.abs(_theta_of(params)), "magnitude")


# =============================================================================
# MASQUE
# =============================================================================

def target_count(sparsity: float, total: int) -> int:
    """K = arrondi au plus proche (demi vers le haut) de (1 − sparsity)·total."""
    if not 0.0 <= sparsity <= 1.0:
        raise ContractViolation(f"sparsité {sparsity} hors de [0, 1]")
    return int(np.floor((1.0 - sparsity) * total + 0.5))


def top_k_mask(scores: Any, k: int) -> np.ndarray:
    """
    Garde les K plus grands scores: c_n = 1 pour les K premiers.

    Égalités départagées par indice croissant; NaN classés en dernier.

    Returns:
        Masque uint8 avec exactement K uns
    """
    scores = np.asarray(scores.scores if isinstance(scores, SensitivityVector) else scores, dtype=np.float64)
    total = scores.size
    if not 0 <= k <= total:
        raise ContractViolation(f"K={k} hors de [0, {total}]")
    keyed = np.where(np.isnan(scores), -np.inf, scores)
    order = np.lexsort((np.arange(total), -keyed))
    mask = np.zeros(total, dtype=np.uint8)
    mask[order[:k]] = 1
    return mask


def prune_mask(vector: SensitivityVector, k: int, layout=None, exempt_bias: bool = False) -> np.ndarray:
    """
    top_k_mask avec exemption optionnelle des biais.

    Les biais exemptés sont toujours retenus et comptent dans K.
    """
    scores = vector.scores
    if exempt_bias:
        if layout is None:
            raise ContractViolation("exempt_bias exige la disposition des paramètres")
        bias = layout.role_mask("bias")
        if int(bias.sum()) > k:
            raise ContractViolation(f"K={k} inférieur au nombre de biais exemptés ({int(bias.sum())})")
        scores = np.where(bias, np.inf, scores)
    return top_k_mask(scores, k)


def score_by_name(name: str, spec: RecurrentCellSpec, params: Any, X: np.ndarray, y: np.ndarray,
                  config: CriterionConfig, readout: Optional[Readout] = None, mode: str = "last",
                  seeds: Optional[Dict[str, int]] = None) -> SensitivityVector:
    """
    Calcule un vecteur de scores à partir du nom du critère.

    Args:
        seeds: Graines par flux ("approx", "random_score")
    """
    seeds = seeds or {}
    X = np.asarray(X, dtype=np.float64)[: config.batch_size]
    y = np.asarray(y)[: config.batch_size]
    if name == "jacobian":
        return jacobian_sensitivity(spec, params, X, config, seeds.get("approx", 0))
    if name in ("snip", "foresight"):
        if readout is None:
            raise ContractViolation(f"le critère {name} exige une couche de sortie")
        fn = snip_score if name == "snip" else foresight_score
        vector = fn(spec, params, readout, X, y, mode, config)
        if config.normalizes:
            gamma = gamma_normalizer(spec, params, config.approx, config.sample_count,
                                     seeds.get("approx", 0), seq_len=X.shape[1])
            vector = replace(vector, scores=apply_gamma(vector.scores, gamma), seed=seeds.get("approx", 0))
        return vector
    if name == "random":
        return random_score(spec.layout.total, seeds.get("random_score", 0))
    if name == "magnitude":
        return magnitude_score(params)
    raise ContractViolation(f"critère inconnu: {name} (attendu: {', '.join(CRITERIA)})")
