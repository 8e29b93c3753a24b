"""
Matrix primitives: compact SVD with a fixed sign convention, exact and
smoothed orthogonalization, Newton-Schulz iteration and seeded sampling.

All functions are pure; randomness is owned per call through an explicit seed.
"""

import logging
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from shared.utils.common import DecompositionError, InvalidArgumentError
from specgf.models.linalg import SvdTriple, as_matrix
from specgf.models.run import DEFAULT_NS_COEFFS, DEFAULT_NS_ITERATIONS

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int]]

# singular values at or below this fraction of sigma_max count as zero
RANK_CUTOFF = 1e-12

def _thin_svd(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD; falls back to the QR-iteration driver when divide-and-conquer fails"""
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver='gesdd', check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.debug(f"gesdd failed on {m.shape} matrix ({e}), retrying with gesvd")
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver='gesvd', check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DecompositionError(f"SVD did not converge for {m.shape} matrix: {e}") from e

def _fix_signs(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flip pairs so the largest-magnitude entry of each left vector is nonnegative"""
    if u.shape[1] == 0:
        return u, v
    # argmax returns the first maximum, so ties resolve to the lowest index
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, v * signs

def svd_compact(m) -> SvdTriple:
    """Compact SVD keeping singular values above RANK_CUTOFF * sigma_max"""
    m = as_matrix(m)
    rows, cols = m.shape
    if m.size == 0:
        return SvdTriple(np.zeros((rows, 0)), np.zeros(0), np.zeros((cols, 0)))

    u, s, vt = _thin_svd(m)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u)) and np.all(np.isfinite(vt))):
        raise DecompositionError(f"SVD produced non-finite factors for {m.shape} matrix")
    if s.size == 0 or s[0] == 0.0:
        return SvdTriple(np.zeros((rows, 0)), np.zeros(0), np.zeros((cols, 0)))

    keep = s > RANK_CUTOFF * s[0]
    u, v = _fix_signs(u[:, keep], vt[keep].T)
    return SvdTriple(left_vectors=u, singular_values=s[keep].copy(), right_vectors=v)

def singular_values(m) -> np.ndarray:
    """Nonzero singular values (same cutoff as svd_compact), non-increasing"""
    m = as_matrix(m)
    if m.size == 0:
        return np.zeros(0)
    try:
        s = scipy.linalg.svdvals(m, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        s = _thin_svd(m)[1]
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(0)
    return s[s > RANK_CUTOFF * s[0]]

def spectral_norm(m) -> float:
    s = singular_values(m)
    return float(s[0]) if s.size else 0.0

def nuclear_norm(m) -> float:
    return float(np.sum(singular_values(m)))

def orthogonalize_exact(m) -> np.ndarray:
    """T(M) = U V^T: every nonzero singular value set to one"""
    m = as_matrix(m)
    triple = svd_compact(m)
    if triple.rank == 0:
        return np.zeros_like(m)
    return triple.left_vectors @ triple.right_vectors.T

def orthogonalize_smoothed(m, beta: float) -> np.ndarray:
    """T_beta(M) = (M M^T + beta I)^(-1/2) M, i.e. sigma -> sigma / sqrt(sigma^2 + beta)"""
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    m = as_matrix(m)
    if m.size == 0 or not np.any(m):
        return np.zeros_like(m)
    u, s, vt = _thin_svd(m)
    return (u * (s / np.sqrt(s * s + beta))) @ vt

def newton_schulz(m, iterations: int = DEFAULT_NS_ITERATIONS,
                  coeffs: Tuple[float, float, float] = DEFAULT_NS_COEFFS) -> np.ndarray:
    """Quintic Newton-Schulz approximation of T(M) after Frobenius normalization"""
    m = as_matrix(m)
    if iterations < 1:
        raise InvalidArgumentError("iterations must be at least 1")
    norm = np.linalg.norm(m)
    if norm == 0.0:
        raise InvalidArgumentError("Newton-Schulz needs a nonzero input")

    a, b, c = coeffs
    x = m / norm
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    for _ in range(iterations):
        gram = x @ x.T
        x = a * x + (b * gram + c * gram @ gram) @ x
    return x.T if transposed else x

def sample_gaussian(rows: int, cols: int, seed: SeedLike) -> np.ndarray:
    """Standard normal matrix, deterministic per seed"""
    if rows < 0 or cols < 0:
        raise InvalidArgumentError("shape must be nonnegative")
    return np.random.default_rng(seed).standard_normal((rows, cols))

def sample_orthonormal(rows: int, cols: int, seed: SeedLike) -> np.ndarray:
    """Orthonormal columns from the QR factor of a seeded Gaussian"""
    if cols > rows:
        raise InvalidArgumentError(f"cannot fit {cols} orthonormal columns in dimension {rows}")
    gaussian = sample_gaussian(rows, cols, seed)
    q, r = scipy.linalg.qr(gaussian, mode='economic', check_finite=False)
    # sign-normalize so the factor is unique (Haar distributed)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs
