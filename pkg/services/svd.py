"""
SVD de petites matrices denses par rotations de Jacobi à un côté (Hestenes).

Les colonnes de A sont orthogonalisées par rotations planes; à convergence,
les normes des colonnes sont les valeurs singulières. Les paires (p, q) suivent
un ordonnancement round-robin: chaque tour contient N/2 paires disjointes,
traitées ensemble et pour tout le batch à la fois.
"""
import logging
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from utils.errors import ContractViolation, NumericFailure

logger = logging.getLogger(__name__)

MAX_DIM = 1024
MAX_SWEEPS = 60
ORTHO_TOL = 1e-15
RESIDUAL_TOL = 1e-10


class SVDResult(NamedTuple):
    """
    sigma: (..., N) trié par ordre décroissant
    u, v: vecteurs singuliers (..., N, N) si demandés, A = u·diag(sigma)·vᵀ
    sweeps: balayages effectués
    residual: max ‖AᵀA − VΣ²Vᵀ‖_F / ‖A‖_F²
    """
    sigma: np.ndarray
    u: Optional[np.ndarray]
    v: Optional[np.ndarray]
    sweeps: int
    residual: float


def round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Tours de paires disjointes couvrant chaque paire (p < q) exactement une fois.

    n impair: une colonne fictive est ajoutée puis écartée.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        # rotation: le premier joueur reste fixe
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotate(U: np.ndarray, V: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    Up, Uq = U[..., p], U[..., q]
    alpha = np.sum(Up * Up, axis=-2)
    beta = np.sum(Uq * Uq, axis=-2)
    gamma = np.sum(Up * Uq, axis=-2)
    scale = np.sqrt(alpha * beta)
    active = np.abs(gamma) > ORTHO_TOL * scale
    off = float(np.max(np.where(scale > 0, np.abs(gamma) / np.where(scale > 0, scale, 1.0), 0.0), initial=0.0))
    if not active.any():
        return off

    safe_gamma = np.where(active, gamma, 1.0)
    zeta = (beta - alpha) / (2.0 * safe_gamma)
    t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
    t = np.where(zeta == 0, 1.0, t)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = c * t
    c = np.where(active, c, 1.0)[..., None, :]
    s = np.where(active, s, 0.0)[..., None, :]

    Vp, Vq = V[..., p], V[..., q]
    U[..., p], U[..., q] = c * Up - s * Uq, s * Up + c * Uq
    V[..., p], V[..., q] = c * Vp - s * Vq, s * Vp + c * Vq
    return off


def svd_small(matrix: np.ndarray, compute_vectors: bool = False, max_sweeps: int = MAX_SWEEPS) -> SVDResult:
    """
    Valeurs singulières de matrices carrées (N, N) ou d'un batch (B, N, N).

    Args:
        matrix: Entrées finies, N <= MAX_DIM
        compute_vectors: Renvoie aussi u et v
        max_sweeps: Plafond de balayages

    Returns:
        SVDResult

    Raises:
        ContractViolation: matrice non carrée, trop grande ou non finie
        NumericFailure: pas de convergence, ou résidu au-delà de RESIDUAL_TOL
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractViolation(f"matrice carrée attendue, forme {A.shape}")
    n = A.shape[-1]
    if n > MAX_DIM:
        raise ContractViolation(f"N={n} au-delà du plafond {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise ContractViolation("svd_small: entrées non finies")

    U = A.copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    rounds = round_robin(n)
    sweeps, off = 0, 0.0
    for sweeps in range(1, max_sweeps + 1):
        off = 0.0
        for p, q in rounds:
            off = max(off, _rotate(U, V, p, q))
        if off <= ORTHO_TOL * 10:
            break
    else:
        residual = _residual(A, U, V)
        if residual >= RESIDUAL_TOL:
            raise NumericFailure("Jacobi SVD: pas de convergence", sweeps=max_sweeps, residual=residual,
                                 off_diagonal=off)

    sigma = np.sqrt(np.sum(U * U, axis=-2))
    order = np.argsort(-sigma, axis=-1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=-1)
    U = np.take_along_axis(U, order[..., None, :], axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)

    residual = _residual(A, U, V)
    if residual >= RESIDUAL_TOL:
        raise NumericFailure("Jacobi SVD: résidu trop élevé", sweeps=sweeps, residual=residual)
    logger.debug(f"SVD Jacobi: N={n}, {sweeps} balayages, résidu {residual:.2e}")

    if not compute_vectors:
        return SVDResult(sigma, None, None, sweeps, residual)
    left = U / np.where(sigma > 0, sigma, 1.0)[..., None, :]
    return SVDResult(sigma, left, V, sweeps, residual)


def _residual(A: np.ndarray, U: np.ndarray, V: np.ndarray) -> float:
    """max sur le batch de ‖AᵀA − VΣ²Vᵀ‖_F / ‖A‖_F² (AV = U donc VΣ²Vᵀ = V UᵀU Vᵀ diagonale)."""
    gram = np.swapaxes(A, -1, -2) @ A
    sq = np.sum(U * U, axis=-2)
    recon = (V * sq[..., None, :]) @ np.swapaxes(V, -1, -2)
    num = np.sqrt(np.sum((gram - recon) ** 2, axis=(-2, -1)))
    den = np.sum(A * A, axis=(-2, -1))
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(np.max(ratio))


def singular_values(matrix: np.ndarray) -> np.ndarray:
    return svd_small(matrix).sigma
