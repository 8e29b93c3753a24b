"""
Factorization objective: target construction, loss, gradients and the
closed-form reference points (best rank-k approximation, regularized
stationary point).
"""

import logging
from functools import reduce
from typing import List, Sequence

import numpy as np

from shared.utils.common import InvalidArgumentError
from specgf.models.problem import FactorState, LossValue, TargetMatrix
from specgf.services.linalg import sample_orthonormal

logger = logging.getLogger(__name__)

# sub-seed streams derived from one run seed
LEFT_BASIS_STREAM = 1
RIGHT_BASIS_STREAM = 2

def construct_target(m: int, n: int, sigma_list: Sequence[float], seed: int) -> TargetMatrix:
    """Y = U_r diag(sigma) V_r^T with seeded Haar bases"""
    sigma = np.asarray(sigma_list, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise InvalidArgumentError("sigma_list must be a non-empty sequence")
    if np.any(sigma <= 0):
        raise InvalidArgumentError("sigma_list entries must be positive")
    if np.any(np.diff(sigma) >= 0):
        raise InvalidArgumentError("sigma_list must be strictly decreasing")
    if sigma.size > min(m, n):
        raise InvalidArgumentError(f"rank {sigma.size} exceeds min(m, n) = {min(m, n)}")

    u_r = sample_orthonormal(m, sigma.size, (seed, LEFT_BASIS_STREAM))
    v_full = sample_orthonormal(n, n, (seed, RIGHT_BASIS_STREAM))
    return TargetMatrix.from_bases(u_r, sigma, v_full)

def product(state: FactorState) -> np.ndarray:
    """W_L ... W_1"""
    return reduce(np.matmul, state.factors)

def _check_shape(prod: np.ndarray, target: TargetMatrix):
    if prod.shape != target.shape:
        raise InvalidArgumentError(
            f"factor product has shape {prod.shape}, target has {target.shape}")

def residual(state: FactorState, target: TargetMatrix) -> np.ndarray:
    prod = product(state)
    _check_shape(prod, target)
    return prod - target.y

def loss(state: FactorState, target: TargetMatrix, lam: float = 0.0) -> LossValue:
    """1/2 ||prod W - Y||_F^2 + lam/2 sum ||W_l||_F^2"""
    res_fro = float(np.linalg.norm(residual(state, target)))
    penalty = 0.0
    if lam > 0:
        penalty = 0.5 * lam * sum(float(np.sum(w * w)) for w in state.factors)
    return LossValue(value=0.5 * res_fro ** 2 + penalty, residual_fro=res_fro, penalty=penalty)

def gradients(state: FactorState, target: TargetMatrix, lam: float = 0.0) -> List[np.ndarray]:
    """Per-factor gradients, ordered like state.factors.

    grad W_l = (left product)^T E (right product)^T + lam W_l, where the left
    product collects the factors before W_l in the chain and the right one
    the factors after it.
    """
    factors = state.factors
    err = residual(state, target)
    depth = len(factors)

    # prefixes[l] = factors[0] @ ... @ factors[l-1]; suffixes[l] = factors[l+1] @ ... @ factors[-1]
    prefixes = [None] * depth
    suffixes = [None] * depth
    for l in range(1, depth):
        prefixes[l] = factors[0] if l == 1 else prefixes[l - 1] @ factors[l - 1]
    for l in range(depth - 2, -1, -1):
        suffixes[l] = factors[-1] if l == depth - 2 else factors[l + 1] @ suffixes[l + 1]

    grads = []
    for l, w in enumerate(factors):
        g = err
        if prefixes[l] is not None:
            g = prefixes[l].T @ g
        if suffixes[l] is not None:
            g = g @ suffixes[l].T
        if lam > 0:
            g = g + lam * w
        grads.append(g)
    return grads

def gradient_norm(state: FactorState, target: TargetMatrix, lam: float = 0.0) -> float:
    """Euclidean norm of the stacked gradient"""
    return float(np.sqrt(sum(np.sum(g * g) for g in gradients(state, target, lam))))

def best_rank_k_approx(target: TargetMatrix, k: int) -> np.ndarray:
    """Eckart-Young truncation of the stored compact SVD"""
    if not 1 <= k <= target.rank:
        raise InvalidArgumentError(f"k must lie in [1, {target.rank}], got {k}")
    return (target.u_r[:, :k] * target.sigma[:k]) @ target.v_r[:, :k].T

def eckart_young_loss(target: TargetMatrix, k: int) -> float:
    """Minimum of the unregularized loss at factor rank k"""
    k = min(k, target.rank)
    return 0.5 * float(np.sum(target.sigma[k:] ** 2))

def regularized_stationary_point(target: TargetMatrix, lam: float, rank: int) -> FactorState:
    """A = U_O D^(1/2), B = D^(1/2) V_O^T with D = Sigma_O - lam I.

    O holds the (at most `rank`) modes with sigma_i > lam; unused columns of
    A and rows of B are zero.
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    if rank < 1:
        raise InvalidArgumentError("rank must be at least 1")
    kept = [i for i in range(target.rank) if target.sigma[i] > lam][:rank]
    m, n = target.shape
    a = np.zeros((m, rank))
    b = np.zeros((rank, n))
    for col, i in enumerate(kept):
        root = np.sqrt(target.sigma[i] - lam)
        a[:, col] = root * target.u_r[:, i]
        b[col, :] = root * target.v_r[:, i]
    logger.debug(f"Regularized stationary point keeps modes {[i + 1 for i in kept]} at lambda={lam}")
    return FactorState(factors=[a, b])
