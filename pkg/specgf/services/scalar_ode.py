"""
Fourth-order integration of the decoupled scalar flows.

Rank-1 system: A = a u, B = b v^T + c z^T against Y = sigma u v^T under the
smoothed orthogonalization. Mode pairs: the per-mode (sigma_A, sigma_B)
dynamics that spectral initialization decouples into.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd

from shared.utils.common import InvalidArgumentError, StepSizeError

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
LOSS_TOLERANCE = 1e-15
STAGE_DISAGREEMENT = 0.5
STAGE_FLOOR = 1e-8

@dataclass(frozen=True)
class Rank1State:
    a: float
    b: float
    c: float
    sigma: float
    beta: float
    alpha: float = 1.0

    @classmethod
    def lora_start(cls, sigma: float, gamma: float, alpha: float, beta: float) -> 'Rank1State':
        """A(0) = 0, B(0) = gamma w^T with <v, w> = alpha"""
        if not 0 < alpha <= 1:
            raise InvalidArgumentError("alpha must lie in (0, 1]")
        return cls(a=0.0, b=gamma * alpha, c=gamma * math.sqrt(1.0 - alpha * alpha),
                   sigma=sigma, beta=beta, alpha=alpha)

    def with_values(self, a: float, b: float, c: float) -> 'Rank1State':
        return Rank1State(a=a, b=b, c=c, sigma=self.sigma, beta=self.beta, alpha=self.alpha)

@dataclass(frozen=True)
class ModePair:
    sa: float
    sb: float
    sigma_i: float
    beta: float

def _smoothed(x: float, beta: float) -> float:
    return x / math.sqrt(x * x + beta)

def rank1_residual_sq(a: float, b: float, c: float, sigma: float) -> float:
    """||d||^2 = (ab - sigma)^2 + (ac)^2"""
    return (a * b - sigma) ** 2 + (a * c) ** 2

def rank1_loss(state: Rank1State) -> float:
    return 0.5 * rank1_residual_sq(state.a, state.b, state.c, state.sigma)

def rank1_m(state: Rank1State) -> float:
    """m = (ab - sigma) b + a c^2, the coefficient of grad_A along u"""
    return (state.a * state.b - state.sigma) * state.b + state.a * state.c ** 2

def rank1_rhs(state: Rank1State):
    """(da, db, dc) of the smoothed rank-1 flow"""
    if not state.beta > 0:
        raise InvalidArgumentError("beta must be positive")
    a, b, c, sigma, beta = state.a, state.b, state.c, state.sigma, state.beta
    m = (a * b - sigma) * b + a * c * c
    scale = math.sqrt(a * a * rank1_residual_sq(a, b, c, sigma) + beta)
    return (-m / math.sqrt(m * m + beta),
            -a * (a * b - sigma) / scale,
            -a * a * c / scale)

def mode_pair_rhs(pair: ModePair):
    """(d sa, d sb) = (-f((sa sb - sigma) sb), -f((sa sb - sigma) sa)), f(x) = x / sqrt(x^2 + beta)"""
    if not pair.beta > 0:
        raise InvalidArgumentError("beta must be positive")
    gap = pair.sa * pair.sb - pair.sigma_i
    return (-_smoothed(gap * pair.sb, pair.beta), -_smoothed(gap * pair.sa, pair.beta))

def rk4_stages(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray,
               dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Classic explicit fourth-order step; returns the new state and the four stage slopes"""
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + dt * (k1 + 2.0 * (k2 + k3) + k4) / 6.0, np.vstack([k1, k2, k3, k4])

def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """Classic explicit fourth-order step for an autonomous system"""
    return rk4_stages(rhs, y, dt)[0]

def stages_disagree(stages: np.ndarray) -> bool:
    """True when some component's stage slopes are inconsistent with a resolved step.

    Either the two midpoint slopes differ by more than STAGE_DISAGREEMENT of the
    component's largest slope (for y' = lambda y, once |lambda dt| exceeds about
    1.4), or the slopes take both signs with each side at least that large,
    which is a step jumping across a saturation point.
    """
    scale = np.max(np.abs(stages), axis=0)
    bound = STAGE_DISAGREEMENT * scale
    midpoint = np.abs(stages[2] - stages[1]) > bound
    two_sided = (stages.max(axis=0) > bound) & (stages.min(axis=0) < -bound)
    return bool(np.any((scale > STAGE_FLOOR) & (midpoint | two_sided)))

def _integrate(rhs: Callable[[np.ndarray], np.ndarray], loss_fn: Callable[[np.ndarray], float],
               y0: np.ndarray, t_end: float, dt: float) -> List[tuple]:
    """Guarded fixed-step loop; returns (t, y) pairs including the start.

    A step that raises the loss or whose midpoint stages disagree is retried
    at half the step size, at most MAX_HALVINGS times; the reduced step size
    is kept afterwards.
    """
    if not dt > 0 or not t_end >= 0:
        raise InvalidArgumentError("dt must be positive and t_end nonnegative")
    t = 0.0
    y = np.asarray(y0, dtype=np.float64)
    current_loss = loss_fn(y)
    points = [(t, y)]

    while t < t_end - 1e-12 * max(1.0, t_end):
        h = min(dt, t_end - t)
        for halvings in range(MAX_HALVINGS + 1):
            candidate, stages = rk4_stages(rhs, y, h)
            candidate_loss = loss_fn(candidate)
            if (np.all(np.isfinite(candidate)) and candidate_loss <= current_loss + LOSS_TOLERANCE
                    and not stages_disagree(stages)):
                break
            if halvings == MAX_HALVINGS:
                raise StepSizeError(
                    f"no acceptable step at t={t:.6g} after {MAX_HALVINGS} halvings (dt={h:.3e})")
            h *= 0.5
            dt = h
            logger.debug(f"Halved step size to {h:.3e} at t={t:.6g}")
        t += h
        y = candidate
        current_loss = candidate_loss
        points.append((t, y))
    return points

def integrate_rank1(init: Rank1State, t_end: float, dt: float) -> pd.DataFrame:
    """Columns t, a, b, c, ab, loss, m"""
    def rhs(y):
        return np.array(rank1_rhs(init.with_values(*y)))

    def loss_fn(y):
        return 0.5 * rank1_residual_sq(y[0], y[1], y[2], init.sigma)

    points = _integrate(rhs, loss_fn, np.array([init.a, init.b, init.c]), t_end, dt)
    t = np.array([p[0] for p in points])
    values = np.vstack([p[1] for p in points])
    a, b, c = values[:, 0], values[:, 1], values[:, 2]
    frame = pd.DataFrame({'t': t, 'a': a, 'b': b, 'c': c, 'ab': a * b})
    frame['loss'] = 0.5 * ((a * b - init.sigma) ** 2 + (a * c) ** 2)
    frame['m'] = (a * b - init.sigma) * b + a * c ** 2
    logger.debug(f"Integrated rank-1 flow to t={t[-1]:.4g} in {len(frame) - 1} steps")
    return frame

def integrate_mode_pair(init: ModePair, t_end: float, dt: float) -> pd.DataFrame:
    """Columns t, sa, sb, product"""
    def rhs(y):
        return np.array(mode_pair_rhs(ModePair(y[0], y[1], init.sigma_i, init.beta)))

    def loss_fn(y):
        return 0.5 * (y[0] * y[1] - init.sigma_i) ** 2

    points = _integrate(rhs, loss_fn, np.array([init.sa, init.sb]), t_end, dt)
    values = np.vstack([p[1] for p in points])
    return pd.DataFrame({
        't': [p[0] for p in points],
        'sa': values[:, 0],
        'sb': values[:, 1],
        'product': values[:, 0] * values[:, 1]
    })

def rank1_derivative_gap(frame: pd.DataFrame, sigma: float, beta: float) -> np.ndarray:
    """|a' - b'| evaluated along an integrated trajectory"""
    gaps = []
    for a, b, c in frame[['a', 'b', 'c']].itertuples(index=False):
        da, db, _ = rank1_rhs(Rank1State(a=a, b=b, c=c, sigma=sigma, beta=beta))
        gaps.append(abs(da - db))
    return np.array(gaps)

def check_rank1_assumption(sigma: float, gamma: float, alpha: float, beta: float) -> List[str]:
    """Smallness conditions on the initialization scale; returns the violated ones.

    With T = sqrt(1 - alpha^2) / alpha * (1 + 4 sqrt(beta) / sigma):
    gamma^2 < alpha sigma / (4 (1 - alpha^2)^(3/2)) and
    gamma < min(sigma / 2 / (sqrt(1 - alpha^2) (alpha + T)), 1).
    """
    violations = []
    if not 0 < alpha <= 1:
        violations.append("alpha must lie in (0, 1]")
        return violations
    if not gamma > 0:
        violations.append("gamma must be positive")
    if gamma ** 2 >= alpha * sigma:
        violations.append("gamma^2 < alpha * sigma")

    tail = math.sqrt(1.0 - alpha * alpha)
    if tail > 0:
        t_scale = tail / alpha * (1.0 + 4.0 * math.sqrt(beta) / sigma)
        if gamma ** 2 >= alpha * sigma / (4.0 * tail ** 3):
            violations.append("gamma^2 < alpha * sigma / (4 (1 - alpha^2)^(3/2))")
        if gamma >= min(0.5 * sigma / (tail * (alpha + t_scale)), 1.0):
            violations.append("gamma < min(sigma / (2 sqrt(1 - alpha^2) (alpha + T)), 1)")
    elif gamma >= 1.0:
        violations.append("gamma < 1")
    return violations
