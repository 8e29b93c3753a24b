"""
Diagnostics over factor states and trajectory logs.

Core variables X = U_r^T A, Z = B V_r, Z_perp = B V_perp and G = X Z track
how the product aligns with the target's singular spaces; the log-level
helpers extract growth slopes, convergence order, active windows and fits.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from shared.utils.common import ConvergenceError, InvalidArgumentError, UnsupportedOperationError
from specgf.models.problem import FactorState, LossValue, TargetMatrix
from specgf.models.run import RunConfig
from specgf.models.trajectory import CoreSnapshot, StepDiagnostics, TrajectoryLog
from specgf.services.linalg import RANK_CUTOFF, singular_values
from specgf.services.problem import loss, product

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FRACTION = 0.05
MIN_WINDOW = 3

def core_variables(state: FactorState, target: TargetMatrix) -> CoreSnapshot:
    """Full core snapshot of a two-factor state"""
    if state.depth != 2:
        raise UnsupportedOperationError(
            f"core variables need two factors, got depth {state.depth}; use product spectra")
    x = target.u_r.T @ state.a
    z = state.b @ target.v_r
    z_perp = state.b @ target.v_perp
    g = x @ z
    diag = np.diag(g).copy()
    k = min(state.rank, target.rank)
    d = diag[:k]
    return CoreSnapshot(
        d=d,
        e=d - target.sigma[:k],
        off_g_fro=float(np.linalg.norm(g - np.diag(diag))),
        xz_perp_fro=float(np.linalg.norm(x @ z_perp)),
        x=x, z=z, z_perp=z_perp, g=g
    )

def default_epsilon(target: TargetMatrix) -> float:
    return DEFAULT_EPSILON_FRACTION * float(target.sigma[-1])

def _padded(values: Sequence[float], width: int) -> np.ndarray:
    out = np.zeros(width)
    values = np.asarray(values, dtype=np.float64)[:width]
    out[:values.size] = values
    return out

def balancedness(state: FactorState) -> np.ndarray:
    """A^T A - B B^T"""
    if state.depth != 2:
        raise UnsupportedOperationError("balancedness is defined for two factors")
    return state.a.T @ state.a - state.b @ state.b.T

def balancedness_rate(state: FactorState, target: TargetMatrix, config: RunConfig) -> np.ndarray:
    """d/dt (A^T A - B B^T) along the flow A' = -D_A, B' = -D_B of the configured direction map"""
    from specgf.services.optimizer import update_directions

    (d_a, d_b), _ = update_directions(state, target, config)
    a, b = state.a, state.b
    return -(d_a.T @ a + a.T @ d_a) + (d_b @ b.T + b @ d_b.T)

def effective_rank(values: Sequence[float]) -> float:
    """exp of the Shannon entropy of the normalized singular values"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or not np.any(values > 0):
        raise InvalidArgumentError("effective rank needs at least one positive singular value")
    kept = values[values > RANK_CUTOFF * values.max()]
    return float(np.exp(stats.entropy(kept / kept.sum())))

def snapshot(state: FactorState, target: TargetMatrix, config: RunConfig,
             reference: Optional[np.ndarray] = None,
             loss_value: Optional[LossValue] = None) -> StepDiagnostics:
    """StepDiagnostics for the current state; `reference` is the initial balancedness"""
    if loss_value is None:
        loss_value = loss(state, target, config.lam)
    svals = singular_values(product(state))[:state.rank]
    epsilon = config.active_epsilon or default_epsilon(target)

    if state.depth == 2:
        core = core_variables(state, target).compact()
        gaps = core.e
    else:
        core = None
        k = min(state.rank, target.rank)
        gaps = _padded(svals, k) - target.sigma[:k]

    drift = None
    if reference is not None and state.depth == 2:
        drift = float(np.linalg.norm(balancedness(state) - reference))

    return StepDiagnostics(
        step=state.step_index,
        time=state.step_index * config.eta,
        loss=loss_value.value,
        product_singular_values=tuple(float(s) for s in svals),
        core=core,
        active_set=tuple(int(i) + 1 for i in np.flatnonzero(np.abs(gaps) > epsilon)),
        effective_rank=effective_rank(svals) if svals.size else 0.0,
        balancedness_drift=drift,
        per_factor_fro_norms=tuple(float(np.linalg.norm(w)) for w in state.factors)
    )

def _sorted_spectrum(d: np.ndarray, product_svals: Sequence[float]) -> np.ndarray:
    return _padded(sorted(product_svals, reverse=True), max(d.size, len(product_svals)))

def diagonal_surrogate_error(snapshot: CoreSnapshot, product_svals: Sequence[float]) -> float:
    """max_i |sigma_pi(i)(AB) - d_i| under the greedy matching pi.

    d_i are visited in descending order; each takes the nearest singular value
    not yet used.
    """
    d = np.asarray(snapshot.d, dtype=np.float64)
    if d.size == 0:
        return 0.0
    svals = _sorted_spectrum(d, product_svals)

    unused = list(range(svals.size))
    error = 0.0
    for i in np.argsort(-d, kind='stable'):
        j = min(unused, key=lambda idx: abs(svals[idx] - d[i]))
        unused.remove(j)
        error = max(error, abs(svals[j] - d[i]))
    return float(error)

def sorted_surrogate_error(snapshot: CoreSnapshot, product_svals: Sequence[float]) -> float:
    """max_i |sigma_i(AB) - d_(i)| pairing both lists in descending order"""
    d = np.asarray(snapshot.d, dtype=np.float64)
    if d.size == 0:
        return 0.0
    svals = _sorted_spectrum(d, product_svals)
    return float(np.max(np.abs(svals[:d.size] - np.sort(d)[::-1])))

def surrogate_margin(log: TrajectoryLog,
                     error_fn: Callable[[CoreSnapshot, Sequence[float]], float] = diagonal_surrogate_error) -> float:
    """max over records of surrogate error minus 2 (off_g_fro + xz_perp_fro); <= 0 means the bound holds"""
    margins = [
        error_fn(r.core, r.product_singular_values) - 2.0 * (r.core.off_g_fro + r.core.xz_perp_fro)
        for r in log.records if r.core is not None
    ]
    return max(margins) if margins else 0.0

def linear_fit(t: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares slope, intercept and R^2"""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.size < 2:
        raise InvalidArgumentError("a linear fit needs at least two points")
    if np.ptp(y) == 0.0:
        return 0.0, float(y[0]), 1.0
    result = stats.linregress(t, y)
    return float(result.slope), float(result.intercept), float(result.rvalue ** 2)

def _window_records(log: TrajectoryLog, window: Tuple[int, int]) -> List[StepDiagnostics]:
    start, end = window
    records = [r for r in log.records if start <= r.step <= end]
    if len(records) < MIN_WINDOW:
        raise InvalidArgumentError(
            f"window {window} holds {len(records)} records, need at least {MIN_WINDOW}")
    return records

def _mode_gaps(log: TrajectoryLog, target_sigma: Optional[Sequence[float]] = None) -> np.ndarray:
    """records x modes array of e_i; deep-chain logs fall back to spectra minus sigma"""
    if all(r.core is not None for r in log.records):
        return log.core_matrix('e')
    if target_sigma is None:
        target_sigma = log.metadata['target']['sigma']
    sigma = np.asarray(target_sigma, dtype=np.float64)
    return log.spectra(sigma.size) - sigma

def _mode_values(log: TrajectoryLog, depth: int = 2) -> np.ndarray:
    """records x modes array of d_i (two factors) or product singular values (deep chains)"""
    if depth == 2 and all(r.core is not None for r in log.records):
        return log.core_matrix('d')
    sigma = log.metadata['target']['sigma']
    return log.spectra(len(sigma))

def active_window(log: TrajectoryLog, epsilon: float, growth_floor: float,
                  depth: int = 2) -> Optional[Tuple[int, int]]:
    """First contiguous stretch where every mode has grown past growth_floor and e_i <= -epsilon.

    Values are d_i for two-factor logs and sigma_i(prod W) otherwise.
    Returns (first_step, last_step) or None when fewer than three records qualify.
    """
    if not log.records:
        return None
    values = _mode_values(log, depth)
    sigma = np.asarray(log.metadata['target']['sigma'], dtype=np.float64)[:values.shape[1]]
    qualifies = np.all(values >= growth_floor, axis=1) & np.all(values - sigma <= -epsilon, axis=1)

    steps = log.steps()
    first = None
    last = None
    for idx, ok in enumerate(qualifies):
        if ok and first is None:
            first = idx
        if first is not None:
            if not ok:
                break
            last = idx
    if first is None or last - first + 1 < MIN_WINDOW:
        return None
    return int(steps[first]), int(steps[last])

def sqrt_coordinate_slopes(log: TrajectoryLog, window: Tuple[int, int]) -> np.ndarray:
    """Per-mode slope of sqrt(d_i) against time step * eta over the window"""
    records = _window_records(log, window)
    if any(r.core is None for r in records):
        raise UnsupportedOperationError("sqrt-coordinate slopes need core variables (two factors)")
    d = np.vstack([r.core.d for r in records])
    if np.any(d <= 0):
        raise InvalidArgumentError("d_i must be positive inside the window")
    times = np.array([r.time for r in records])
    return np.array([linear_fit(times, np.sqrt(d[:, i]))[0] for i in range(d.shape[1])])

def nth_root_spectra(log: TrajectoryLog, depth: int) -> np.ndarray:
    """records x modes array of sigma_i(prod W)^(1/depth)"""
    if depth < 1:
        raise InvalidArgumentError("depth must be positive")
    width = len(log.metadata['target']['sigma'])
    return np.power(np.clip(log.spectra(width), 0.0, None), 1.0 / depth)

def nth_root_fits(log: TrajectoryLog, depth: int,
                  window: Tuple[int, int]) -> List[Tuple[float, float, float]]:
    """Linear fits (slope, intercept, R^2) of the depth-th root trajectories over the window"""
    start, end = window
    mask = (log.steps() >= start) & (log.steps() <= end)
    if mask.sum() < MIN_WINDOW:
        raise InvalidArgumentError(f"window {window} holds fewer than {MIN_WINDOW} records")
    roots = nth_root_spectra(log, depth)[mask]
    times = log.times()[mask]
    return [linear_fit(times, roots[:, i]) for i in range(roots.shape[1])]

def max_pairwise_gap(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.max() - values.min()) if values.size else 0.0

def convergence_order(log: TrajectoryLog, epsilon: float) -> Tuple[int, ...]:
    """1-based modes sorted by the step from which |e_i| <= epsilon holds to the end"""
    if not log.records:
        raise InvalidArgumentError("empty log")
    gaps = np.abs(_mode_gaps(log))
    steps = log.steps()
    settle = []
    for mode in range(gaps.shape[1]):
        column = gaps[:, mode]
        if column[-1] > epsilon:
            raise ConvergenceError(
                f"mode {mode + 1} never settled within {epsilon} (last gap {column[-1]:.4g})",
                mode=mode + 1, last_gap=float(column[-1]))
        outside = np.flatnonzero(column > epsilon)
        first = outside[-1] + 1 if outside.size else 0
        settle.append((int(steps[first]), mode + 1))
    return tuple(mode for _, mode in sorted(settle))

def balancedness_drift(log: TrajectoryLog) -> np.ndarray:
    """Per-record ||(A^T A - B B^T)(t) - (A^T A - B B^T)(0)||_F"""
    if any(r.balancedness_drift is None for r in log.records):
        raise UnsupportedOperationError("balancedness drift is only recorded for two-factor runs")
    return np.array([r.balancedness_drift for r in log.records])

def steps_to_loss(log: TrajectoryLog, threshold: float) -> Optional[int]:
    """First logged step whose loss is at or below threshold"""
    for record in log.records:
        if record.loss <= threshold:
            return record.step
    return None

def log_loss_fit(log: TrajectoryLog, decades: float = 1.0) -> Tuple[float, float]:
    """Slope and R^2 of log10 loss against time over the final `decades` of loss"""
    losses = log.losses()
    if losses.size < MIN_WINDOW or np.any(losses <= 0):
        raise InvalidArgumentError("log-loss fit needs at least three positive losses")
    ceiling = losses[-1] * 10.0 ** decades
    above = np.flatnonzero(losses > ceiling)
    start = above[-1] + 1 if above.size else 0
    if losses.size - start < MIN_WINDOW:
        raise InvalidArgumentError("final loss decade holds fewer than three records")
    slope, _, r2 = linear_fit(log.times()[start:], np.log10(losses[start:]))
    return slope, r2

def column_space_leakage(state: FactorState, target: TargetMatrix) -> float:
    """||(I - U_r U_r^T) A||_F / ||A||_F, zero for A = 0"""
    a = state.a
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return 0.0
    leak = a - target.u_r @ (target.u_r.T @ a)
    return float(np.linalg.norm(leak) / norm)

def alignment_sup(log: TrajectoryLog, window: Optional[Tuple[int, int]] = None) -> Tuple[float, float]:
    """sup of off_g_fro and xz_perp_fro over the window (whole log when None)"""
    records = log.records
    if window is not None:
        records = [r for r in records if window[0] <= r.step <= window[1]]
    records = [r for r in records if r.core is not None]
    if not records:
        return 0.0, 0.0
    return (max(r.core.off_g_fro for r in records), max(r.core.xz_perp_fro for r in records))

def max_loss_increase(log: TrajectoryLog, window: Optional[Tuple[int, int]] = None) -> float:
    """Largest L(t+1) - L(t) between consecutive records (window inclusive)"""
    losses = log.losses()
    steps = log.steps()
    if window is not None:
        mask = (steps >= window[0]) & (steps <= window[1])
        losses = losses[mask]
    if losses.size < 2:
        return 0.0
    return float(np.max(np.diff(losses)))

def plateau_loss_bound(eta: float, mu: float, sigma: Sequence[float], step_scale: float = 1.0) -> float:
    """Loss envelope of a fixed-step spectral run oscillating around its minimum.

    Each mode's factors move by at most h = eta * step_scale / (1 - mu) per
    step, so the product sits on a lattice of spacing about 2 h sqrt(sigma_i)
    and the loss stays below 2 h^2 sum(sigma).
    """
    if eta <= 0 or step_scale <= 0:
        raise InvalidArgumentError(f"eta and step_scale must be positive, got {eta}, {step_scale}")
    if not 0 <= mu < 1:
        raise InvalidArgumentError(f"mu must lie in [0, 1), got {mu}")
    h = eta * step_scale / (1.0 - mu)
    return float(2.0 * h ** 2 * np.sum(np.asarray(sigma, dtype=float)))
