"""
Discrete-time steppers: GD, SpecGD with exact or smoothed orthogonalization
and Muon (momentum + Newton-Schulz) on factor chains of any depth.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from shared.utils.common import DivergenceError, InvalidArgumentError
from specgf import __version__
from specgf.models.linalg import as_matrix
from specgf.models.problem import FactorState, TargetMatrix
from specgf.models.run import InitKind, Method, RunConfig
from specgf.models.trajectory import TrajectoryLog
from specgf.services import diagnostics
from specgf.services.linalg import (
    newton_schulz, orthogonalize_exact, orthogonalize_smoothed, sample_gaussian, sample_orthonormal
)
from specgf.services.problem import gradient_norm, gradients, loss

logger = logging.getLogger(__name__)

# W_1 draws from INIT_STREAM so B(0) is the same for every depth; middle factors follow it
INIT_STREAM = 3
ROTATION_STREAM = 64

def chain_shapes(m: int, n: int, rank: int, depth: int) -> List[Tuple[int, int]]:
    """Shapes of [W_L, ..., W_1]: m x r, r x r, ..., r x n"""
    return [(m, rank)] + [(rank, rank)] * (depth - 2) + [(rank, n)]

def initialize(config: RunConfig, target: TargetMatrix) -> FactorState:
    """Initial factor chain and zeroed momentum buffers"""
    init = config.init
    errors = init.validate()
    if errors:
        raise InvalidArgumentError("; ".join(errors))

    m, n = target.shape
    rank = config.rank or target.rank

    if init.kind is InitKind.LORA:
        shapes = chain_shapes(m, n, rank, config.depth)
        factors = [np.zeros(shapes[0])]
        for offset, shape in enumerate(shapes[1:-1], start=1):
            factors.append(init.gamma * sample_gaussian(*shape, (config.seed, INIT_STREAM + offset)))
        factors.append(init.gamma * sample_gaussian(*shapes[-1], (config.seed, INIT_STREAM)))

    elif init.kind is InitKind.SPECTRAL:
        if config.depth != 2:
            raise InvalidArgumentError("spectral initialization is defined for two factors")
        if rank > target.rank:
            raise InvalidArgumentError("spectral initialization needs rank <= target rank")
        sa = np.asarray(init.spectral_sigma_a, dtype=np.float64)
        sb = np.asarray(init.spectral_sigma_b, dtype=np.float64)
        if sa.shape != (rank,) or sb.shape != (rank,):
            raise InvalidArgumentError(f"spectral diagonals must have length {rank}")
        ceiling = np.sqrt(target.sigma[-1])
        if np.any(sa >= ceiling) or np.any(sb >= ceiling):
            raise InvalidArgumentError(
                f"spectral diagonals must stay below sqrt(sigma_min) = {ceiling:.6g}")
        q = sample_orthonormal(rank, rank, (config.seed, ROTATION_STREAM))
        factors = [(target.u_r[:, :rank] * sa) @ q.T, (q * sb) @ target.v_r[:, :rank].T]

    else:
        factors = [as_matrix(w, "explicit factor").copy() for w in init.explicit_factors]
        if len(factors) != config.depth:
            raise InvalidArgumentError(f"expected {config.depth} explicit factors, got {len(factors)}")
        if factors[0].shape[0] != m or factors[-1].shape[1] != n:
            raise InvalidArgumentError("explicit factors do not compose to the target shape")

    momentum = [np.zeros_like(w) for w in factors] if config.uses_momentum else None
    return FactorState(factors=factors, momentum=momentum)

def _direction(buffer: np.ndarray, config: RunConfig) -> np.ndarray:
    if config.method is Method.GD:
        return buffer
    if config.method is Method.SPEC_EXACT:
        return orthogonalize_exact(buffer)
    if config.method is Method.SPEC_SMOOTHED:
        return orthogonalize_smoothed(buffer, config.beta)
    if not np.any(buffer):
        return np.zeros_like(buffer)
    return newton_schulz(buffer, config.ns_iterations, config.ns_coeffs)

def update_directions(state: FactorState, target: TargetMatrix,
                      config: RunConfig) -> Tuple[List[np.ndarray], Optional[List[np.ndarray]]]:
    """Per-factor update directions D_l and the new momentum buffers (None without momentum)"""
    grads = gradients(state, target, config.lam)
    if not config.uses_momentum:
        return [_direction(g, config) for g in grads], None

    previous = state.momentum or [np.zeros_like(g) for g in grads]
    buffers = [g + config.mu * mom for g, mom in zip(grads, previous)]
    return [_direction(buf, config) for buf in buffers], buffers

def step(state: FactorState, target: TargetMatrix, config: RunConfig) -> FactorState:
    """One simultaneous update W_l <- W_l - eta D_l, gradients taken at the pre-step point"""
    directions, momentum = update_directions(state, target, config)
    next_index = state.step_index + 1

    with np.errstate(over='ignore', invalid='ignore'):
        factors = [w - config.eta * d for w, d in zip(state.factors, directions)]
    for l, w in enumerate(factors):
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"factor {l} became non-finite", step=next_index)
        norm = float(np.linalg.norm(w))
        if norm > config.norm_cap:
            raise DivergenceError(
                f"factor {l} norm {norm:.3e} exceeded cap {config.norm_cap:.1e}", step=next_index)

    return state.with_factors(factors, momentum)

def distance(state_a: FactorState, state_b: FactorState) -> float:
    """Euclidean distance between factor tuples"""
    if [w.shape for w in state_a.factors] != [w.shape for w in state_b.factors]:
        raise InvalidArgumentError("factor chains have different shapes")
    return float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(state_a.factors, state_b.factors))))

def _enabled(threshold: float) -> bool:
    """Stopping thresholds of 0 or +inf are off"""
    return 0 < threshold < np.inf

def _should_stop(config: RunConfig, loss_value: float, state: FactorState, target: TargetMatrix) -> bool:
    if _enabled(config.stop_loss) and loss_value <= config.stop_loss:
        return True
    if _enabled(config.stop_grad_norm) and gradient_norm(state, target, config.lam) <= config.stop_grad_norm:
        return True
    return False

def run(config: RunConfig, target: TargetMatrix, label: Optional[str] = None,
        metadata: Optional[dict] = None) -> TrajectoryLog:
    """Iterate `step` until a stopping rule fires or max_steps is reached.

    Records steps 1..max_steps (every log_stride-th plus the last one). A
    state that already satisfies the stopping rule yields a single step-0
    record. Divergence re-raises with the partial log attached.
    """
    config.ensure_valid()
    state = initialize(config, target)
    label = label or config.method.value

    log_metadata = {
        'label': label,
        'config': config.to_dict(),
        'target': target.to_dict(),
        'version': __version__
    }
    log_metadata.update(metadata or {})
    log = TrajectoryLog(metadata=log_metadata)

    reference = diagnostics.balancedness(state) if state.depth == 2 else None
    current = loss(state, target, config.lam)
    logger.debug(f"Starting run {label}: method={config.method.value}, eta={config.eta}, "
                 f"max_steps={config.max_steps}, initial loss {current.value:.6e}")

    if _should_stop(config, current.value, state, target):
        log.append(diagnostics.snapshot(state, target, config, reference, current))
        log.final_state = state
        return log

    for t in range(1, config.max_steps + 1):
        try:
            state = step(state, target, config)
        except DivergenceError as e:
            e.log = log
            log.final_state = state
            logger.warning(f"Run {label} diverged: {e}")
            raise

        current = loss(state, target, config.lam)
        stop = _should_stop(config, current.value, state, target)
        if t % config.log_stride == 0 or stop or t == config.max_steps:
            log.append(diagnostics.snapshot(state, target, config, reference, current))
        if stop:
            break

    log.final_state = state
    logger.debug(f"Finished run {label}: {state.step_index} steps, final loss {current.value:.6e}")
    return log
