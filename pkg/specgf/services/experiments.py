"""
Scenario registry and the experiment procedures.

Every scenario is a deterministic function of (name, seed). Independent runs
inside a scenario go through a thread pool; results are always collected in
sorted run-id order, so completion order never reaches a summary.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from shared.utils.common import (
    ConfigurationError, ConvergenceError, DivergenceError, InvalidArgumentError, measure_time
)
from shared.utils.config import AcceptanceThresholds, get_config, get_worker_count
from specgf.models.experiment import (
    BASIN_TARGET, REFERENCE_TARGET, BasinResult, ConfigDocument, Scenario, ScenarioResult, TargetSpec
)
from specgf.models.problem import FactorState, TargetMatrix
from specgf.models.run import DEFAULT_SMOOTHING_BETA, InitKind, InitSpec, Method, RunConfig
from specgf.models.trajectory import TrajectoryLog
from specgf.services import diagnostics
from specgf.services.document_parser import CUSTOM_SCENARIO
from specgf.services.optimizer import distance, initialize, run
from specgf.services.problem import (
    best_rank_k_approx, construct_target, eckart_young_loss, gradient_norm, product,
    regularized_stationary_point
)
from specgf.services.linalg import singular_values
from specgf.services.scalar_ode import (
    ModePair, Rank1State, check_rank1_assumption, integrate_mode_pair, integrate_rank1,
    rank1_derivative_gap
)

logger = logging.getLogger(__name__)

# step budgets at eta = 0.01 on the reference target
SPECTRAL_STEPS = 1000
GD_STEPS = 6000
STABLE_STEPS = 4000
LONG_RUN_STEPS = 40000

BASIN_ETA = 1e-4
BASIN_GAMMA = 5e-4
BASIN_RANK = 4
BASIN_LOG_STRIDE = 500
BASIN_SEED_STRIDE = 1000
PERTURBATION_STREAM = 100

MOMENTUM_VALUES = (0.0, 0.3, 0.5, 0.9)
RANK_VALUES = (1, 2, 3, 4)
DEPTH_VALUES = (2, 3, 4, 5)
REGULARIZATION_VALUES = (0.1, 0.8)

DRIFT_BLOCK = {'a': 1.0, 'b': 0.5, 'sigma': 2.0, 'm': 4, 'rank': 2, 'target_rank': 3}

RANK1_SIGMA = 2.0
RANK1_ALPHA = 0.8
RANK1_GAMMAS = (1e-2, 1e-3, 1e-4)
RANK1_T_END = 3.0
RANK1_DT = 1e-3
# below this fraction of sigma the rank-1 run counts as pre-saturation
SATURATION_FRACTION = 1.0 - 1e-3

SPECTRAL_INIT_SCALE = 0.01
SPECTRAL_INIT_ETA = 1e-3
MODE_PAIR_T_END = 4.0
PRE_SATURATION_FRACTION = 0.9

@dataclass
class ScenarioContext:
    """Execution settings shared by every run of a scenario"""
    thresholds: AcceptanceThresholds = field(default_factory=AcceptanceThresholds)
    workers: int = 1
    progress: bool = False
    ci_scale: bool = True
    options: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_system_config(cls, **overrides) -> 'ScenarioContext':
        config = get_config()
        context = cls(thresholds=config.thresholds, workers=get_worker_count(),
                      progress=config.runtime.progress)
        for key, value in overrides.items():
            if hasattr(context, key) and key != 'options':
                setattr(context, key, value)
            else:
                context.options[key] = value
        return context

def _run_jobs(jobs: Dict[str, Callable[[], Any]], context: ScenarioContext, desc: str) -> Dict[str, Any]:
    """Run independent jobs on the pool; divergence is captured as the job's result"""
    results = {}
    with ThreadPoolExecutor(max_workers=max(1, context.workers)) as pool:
        futures = {pool.submit(job): run_id for run_id, job in jobs.items()}
        completed = as_completed(futures)
        if context.progress:
            completed = tqdm(completed, total=len(futures), desc=desc)
        for future in completed:
            run_id = futures[future]
            try:
                results[run_id] = future.result()
            except DivergenceError as e:
                logger.warning(f"{desc}: run {run_id} diverged at step {e.step}")
                results[run_id] = e
    return {run_id: results[run_id] for run_id in sorted(results)}

def _target(spec: TargetSpec, seed: int) -> TargetMatrix:
    m, n, sigma = spec
    return construct_target(m, n, sigma, seed)

def _metadata(scenario: str, seed: int, run_id: str, target_spec: Optional[TargetSpec]) -> Dict[str, Any]:
    data = {'scenario': scenario, 'seed': seed, 'run_id': run_id}
    if target_spec is not None:
        data['target_spec'] = {'m': target_spec[0], 'n': target_spec[1], 'sigma': list(target_spec[2])}
    return data

def _job(config: RunConfig, target: TargetMatrix, label: str, metadata: Dict[str, Any]):
    return lambda: run(config, target, label=label, metadata=metadata)

def _le(value: Optional[float], bound: float) -> bool:
    return value is not None and bool(np.isfinite(value)) and value <= bound

def _logs_only(results: Dict[str, Any]) -> Dict[str, TrajectoryLog]:
    return {run_id: r for run_id, r in results.items() if isinstance(r, TrajectoryLog)}

def reference_config(seed: int, method: Method = Method.SPEC_EXACT, **changes) -> RunConfig:
    """LoRA start with gamma = 1e-3 at eta = 0.01 on the reference target"""
    config = RunConfig(method=method, eta=0.01, init=InitSpec(kind=InitKind.LORA, gamma=1e-3),
                       max_steps=SPECTRAL_STEPS, seed=seed)
    if method is Method.SPEC_SMOOTHED and 'beta' not in changes:
        changes['beta'] = DEFAULT_SMOOTHING_BETA
    return config.with_updates(**changes)

def stable_config(seed: int, thresholds: AcceptanceThresholds, **changes) -> RunConfig:
    """Smoothed run whose late phase is gradient-like and converges to small losses"""
    return reference_config(seed, Method.SPEC_SMOOTHED, beta=thresholds.stable_beta, **changes)

def growth_summary(log: TrajectoryLog, target: TargetMatrix, thresholds: AcceptanceThresholds) -> Dict[str, Any]:
    """Active window, sqrt-coordinate slopes, convergence order, alignment and descent of one log"""
    window = diagnostics.active_window(log, diagnostics.default_epsilon(target), thresholds.growth_floor)
    summary = {
        'final_loss': log.final.loss,
        'steps': log.final.step,
        'active_window': list(window) if window else None,
        'slopes': None,
        'slope_gap': None,
        'alignment_off_g': None,
        'alignment_xz_perp': None,
        'max_loss_increase': None
    }
    if window:
        slopes = diagnostics.sqrt_coordinate_slopes(log, window)
        off_g, xz_perp = diagnostics.alignment_sup(log, window)
        summary.update(
            slopes=slopes.tolist(),
            slope_gap=diagnostics.max_pairwise_gap(slopes),
            alignment_off_g=off_g,
            alignment_xz_perp=xz_perp,
            max_loss_increase=diagnostics.max_loss_increase(log, window)
        )
    try:
        summary['order'] = list(diagnostics.convergence_order(log, thresholds.order_epsilon))
    except ConvergenceError as e:
        summary['order'] = None
        summary['unsettled_mode'] = e.mode
        summary['unsettled_gap'] = e.last_gap
    summary['surrogate_margin'] = diagnostics.surrogate_margin(log)
    summary['sorted_surrogate_margin'] = diagnostics.surrogate_margin(log, diagnostics.sorted_surrogate_error)
    if log.final_state is not None and log.final_state.depth == 2:
        summary['column_space_leakage'] = diagnostics.column_space_leakage(log.final_state, target)
    return summary

def _same_loss_window(log: TrajectoryLog, reference: TrajectoryLog, window) -> Optional[tuple]:
    """Steps of `log` whose losses lie within the loss range `reference` spans over `window`"""
    losses = [r.loss for r in reference.records if window[0] <= r.step <= window[1]]
    high, low = max(losses), min(losses)
    steps = [r.step for r in log.records if low <= r.loss <= high]
    if len(steps) < diagnostics.MIN_WINDOW:
        return None
    return steps[0], steps[-1]

@measure_time
def scenario_uniform_growth(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """SpecExact, SpecSmoothed and GD from the same LoRA start on the reference target"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    target = _target(REFERENCE_TARGET, seed)
    configs = {
        'gd': reference_config(seed, Method.GD, max_steps=GD_STEPS, stop_loss=th.converged_loss),
        'spec_exact': reference_config(seed, Method.SPEC_EXACT),
        'spec_smoothed': reference_config(seed, Method.SPEC_SMOOTHED),
        'spec_smoothed_stable': stable_config(seed, th, max_steps=STABLE_STEPS, stop_loss=th.converged_loss)
    }
    jobs = {
        run_id: _job(config, target, run_id, _metadata('uniform_growth', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, 'uniform_growth')
    result = ScenarioResult(name='uniform_growth', seed=seed, logs=_logs_only(results))
    for run_id, outcome in results.items():
        if isinstance(outcome, DivergenceError):
            raise outcome

    logs = result.logs
    summaries = {run_id: growth_summary(log, target, th) for run_id, log in logs.items()}
    try:
        slope, r2 = diagnostics.log_loss_fit(logs['spec_smoothed_stable'])
    except InvalidArgumentError:
        slope, r2 = float('nan'), 0.0
    summaries['spec_smoothed_stable'].update(late_phase_slope=slope, late_phase_r2=r2)

    gd_ratio = None
    exact_window = summaries['spec_exact']['active_window']
    if exact_window:
        gd_window = _same_loss_window(logs['gd'], logs['spec_exact'], exact_window)
        if gd_window:
            try:
                gd_slopes = diagnostics.sqrt_coordinate_slopes(logs['gd'], gd_window)
            except InvalidArgumentError:
                # a mode with d_i <= 0 has not started growing
                gd_slopes = np.zeros(target.rank)
            low = gd_slopes.min()
            gd_ratio = float(gd_slopes.max() / low) if low > 0 else float('inf')
            summaries['gd']['same_loss_window'] = list(gd_window)
            summaries['gd']['same_loss_slopes'] = gd_slopes.tolist()
    summaries['gd']['slope_ratio'] = gd_ratio

    rank = target.rank
    smallest_first = list(range(rank, 0, -1))
    largest_first = list(range(1, rank + 1))
    gd_steps = diagnostics.steps_to_loss(logs['gd'], th.converged_loss)
    stable_steps = diagnostics.steps_to_loss(logs['spec_smoothed_stable'], th.converged_loss)
    smoothed = summaries['spec_smoothed']
    bound = th.alignment_factor * configs['spec_smoothed'].init.gamma

    result.summary = {'runs': summaries, 'steps_to_converged_loss': {
        'gd': gd_steps, 'spec_smoothed_stable': stable_steps}}
    for run_id in ('spec_exact', 'spec_smoothed'):
        s = summaries[run_id]
        result.checks[f'{run_id}_plateau'] = _le(s['final_loss'], th.spectral_loss_plateau)
        result.checks[f'{run_id}_slope_gap'] = _le(s['slope_gap'], th.slope_gap)
        result.checks[f'{run_id}_smallest_first'] = s['order'] == smallest_first
        result.checks[f'{run_id}_diagonal_surrogate'] = _le(s['surrogate_margin'], 1e-9)
        result.checks[f'{run_id}_monotone_descent'] = _le(s['max_loss_increase'], th.descent_tolerance)
    result.checks['gd_largest_first'] = summaries['gd']['order'] == largest_first
    result.checks['gd_slope_ratio'] = gd_ratio is not None and gd_ratio >= th.gd_slope_ratio
    result.checks['spec_smoothed_alignment'] = (
        _le(smoothed['alignment_off_g'], bound) and _le(smoothed['alignment_xz_perp'], bound))
    result.checks['stable_converged'] = _le(summaries['spec_smoothed_stable']['final_loss'], th.converged_loss)
    result.checks['late_phase_exponential'] = bool(r2 >= th.late_phase_r2 and slope < 0)
    result.checks['smoothed_faster_than_gd'] = (
        stable_steps is not None and (gd_steps is None or stable_steps < gd_steps))
    return result

@measure_time
def scenario_loss_comparison(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Steps to a common loss floor for SpecSmoothed and GD from the same start"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    target = _target(REFERENCE_TARGET, seed)
    common = dict(max_steps=th.comparison_max_steps, stop_loss=th.converged_loss, log_stride=10)
    configs = {
        'gd': reference_config(seed, Method.GD, **common),
        'spec_smoothed': stable_config(seed, th, **common)
    }
    jobs = {
        run_id: _job(config, target, run_id, _metadata('loss_comparison', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, 'loss_comparison')
    result = ScenarioResult(name='loss_comparison', seed=seed, logs=_logs_only(results))

    steps = {run_id: diagnostics.steps_to_loss(log, th.converged_loss) for run_id, log in result.logs.items()}
    result.summary = {
        'steps_to_loss': steps,
        'final_loss': {run_id: log.final.loss for run_id, log in result.logs.items()},
        'loss_floor': th.converged_loss
    }
    spec_steps = steps.get('spec_smoothed')
    gd_steps = steps.get('gd')
    result.checks['spec_smoothed_reaches_floor'] = spec_steps is not None
    result.checks['spec_smoothed_fewer_steps'] = spec_steps is not None and (
        gd_steps is None or spec_steps < gd_steps)
    return result

@measure_time
def scenario_momentum_sweep(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Momentum sweep with exact orthogonalization or Newton-Schulz (options['orthogonalizer'])"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    orthogonalizer = context.options.get('orthogonalizer', 'exact')
    if orthogonalizer not in ('exact', 'newton_schulz'):
        raise InvalidArgumentError(f"orthogonalizer must be 'exact' or 'newton_schulz', got {orthogonalizer!r}")
    method = Method.SPEC_EXACT if orthogonalizer == 'exact' else Method.MUON_NS
    # Newton-Schulz steps are at most the upper end of its output interval
    step_scale = 1.0 if orthogonalizer == 'exact' else th.ns_interval[1]
    target = _target(REFERENCE_TARGET, seed)

    configs = {f'mu_{mu:.1f}': reference_config(seed, method, mu=mu) for mu in MOMENTUM_VALUES}
    jobs = {
        run_id: _job(config, target, run_id, _metadata('momentum_sweep', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, f'momentum_sweep[{orthogonalizer}]')
    result = ScenarioResult(name='momentum_sweep', seed=seed, logs=_logs_only(results))

    summaries = {}
    for run_id, outcome in results.items():
        if isinstance(outcome, DivergenceError):
            summaries[run_id] = {'diverged_at': outcome.step}
            result.checks[f'{run_id}_slope_gap'] = False
            result.checks[f'{run_id}_loss'] = False
            continue
        summary = growth_summary(outcome, target, th)
        losses = outcome.losses()
        tail = losses[-max(1, losses.size // 10):]
        summary['tail_min_loss'] = float(tail.min())
        summary['plateau_bound'] = diagnostics.plateau_loss_bound(
            configs[run_id].eta, configs[run_id].mu, target.sigma, step_scale)
        summaries[run_id] = summary
        result.checks[f'{run_id}_slope_gap'] = _le(summary['slope_gap'], th.sweep_slope_gap)
        result.checks[f'{run_id}_loss'] = _le(summary['tail_min_loss'], summary['plateau_bound'])
    result.summary = {'orthogonalizer': orthogonalizer, 'runs': summaries}
    return result

@measure_time
def scenario_rank_sweep(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """LoRA ranks below the target rank converge to the best rank-r approximation"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    target = _target(REFERENCE_TARGET, seed)
    configs = {
        f'rank_{r}': stable_config(seed, th, rank=r, max_steps=LONG_RUN_STEPS,
                                   stop_grad_norm=th.regularized_gradient_norm, log_stride=10)
        for r in RANK_VALUES
    }
    jobs = {
        run_id: _job(config, target, run_id, _metadata('rank_sweep', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, 'rank_sweep')
    result = ScenarioResult(name='rank_sweep', seed=seed, logs=_logs_only(results))

    summaries = {}
    for r in RANK_VALUES:
        run_id = f'rank_{r}'
        log = result.logs.get(run_id)
        if log is None:
            result.checks[f'{run_id}_distance'] = False
            result.checks[f'{run_id}_loss'] = False
            continue
        prod = product(log.final_state)
        dist = float(np.linalg.norm(prod - best_rank_k_approx(target, r)))
        expected = eckart_young_loss(target, r)
        top = singular_values(prod)
        summaries[run_id] = {
            'distance_to_best_rank': dist,
            'final_loss': log.final.loss,
            'eckart_young_loss': expected,
            'top_singular_value': float(top[0]) if top.size else 0.0,
            'steps': log.final.step
        }
        result.checks[f'{run_id}_distance'] = dist <= th.rank_distance
        result.checks[f'{run_id}_loss'] = abs(log.final.loss - expected) <= th.rank_loss_tolerance
    result.summary = {'runs': summaries}
    return result

@measure_time
def scenario_depth_sweep(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Depth-L chains: L-th roots of the product spectrum grow linearly and uniformly"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    target = _target(REFERENCE_TARGET, seed)
    configs = {f'depth_{depth}': reference_config(seed, depth=depth) for depth in DEPTH_VALUES}
    jobs = {
        run_id: _job(config, target, run_id, _metadata('depth_sweep', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, 'depth_sweep')
    result = ScenarioResult(name='depth_sweep', seed=seed, logs=_logs_only(results))

    epsilon = diagnostics.default_epsilon(target)
    summaries = {}
    for depth in DEPTH_VALUES:
        run_id = f'depth_{depth}'
        log = result.logs.get(run_id)
        window = diagnostics.active_window(log, epsilon, th.growth_floor, depth=depth) if log else None
        if window is None:
            summaries[run_id] = {'active_window': None}
            result.checks[f'{run_id}_linear'] = False
            result.checks[f'{run_id}_slope_gap'] = False
            continue
        fits = diagnostics.nth_root_fits(log, depth, window)
        slopes = [fit[0] for fit in fits]
        r2 = [fit[2] for fit in fits]
        summaries[run_id] = {
            'active_window': list(window),
            'slopes': slopes,
            'r2': r2,
            'slope_gap': diagnostics.max_pairwise_gap(slopes),
            'final_loss': log.final.loss
        }
        result.checks[f'{run_id}_linear'] = min(r2) >= th.depth_r2
        result.checks[f'{run_id}_slope_gap'] = summaries[run_id]['slope_gap'] <= th.sweep_slope_gap
    result.summary = {'runs': summaries}
    return result

def perturb(state: FactorState, radius: float, seed: Sequence[int]) -> FactorState:
    """state + radius * (Gaussian direction normalized over all factors)"""
    rng = np.random.default_rng(tuple(seed))
    direction = [rng.standard_normal(w.shape) for w in state.factors]
    norm = np.sqrt(sum(np.sum(d * d) for d in direction))
    scale = radius / norm if norm > 0 else 0.0
    return FactorState(factors=[w + scale * d for w, d in zip(state.factors, direction)])

def _basin_config(seed: int, th: AcceptanceThresholds, init: InitSpec) -> RunConfig:
    return RunConfig(method=Method.SPEC_SMOOTHED, beta=DEFAULT_SMOOTHING_BETA, eta=BASIN_ETA,
                     rank=BASIN_RANK, init=init, seed=seed, max_steps=th.basin_max_steps,
                     stop_loss=th.basin_converged_loss, log_stride=BASIN_LOG_STRIDE)

def basin_restart(minimum: FactorState, start: FactorState, target: TargetMatrix, config: RunConfig,
                  run_id: str, metadata: Dict[str, Any], th: AcceptanceThresholds):
    """Run from `start` and measure the distance to `minimum` before and after"""
    explicit = config.with_updates(init=InitSpec(kind=InitKind.EXPLICIT,
                                                 explicit_factors=tuple(start.factors)))
    log = run(explicit, target, label=run_id, metadata=metadata)
    basin = BasinResult(
        run_id=run_id,
        converged=log.final.loss <= th.basin_converged_loss,
        final_loss=log.final.loss,
        initial_distance=distance(start, minimum),
        final_distance=distance(log.final_state, minimum),
        steps=log.final.step
    )
    return log, basin

@measure_time
def scenario_basin(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Converge base runs, then restart from random points at the init-to-minimum radius"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    base_runs = th.ci_base_runs if context.ci_scale else th.base_runs
    perturbations = th.ci_perturbations if context.ci_scale else th.perturbations
    base_runs = int(context.options.get('base_runs', base_runs))
    perturbations = int(context.options.get('perturbations', perturbations))
    target = _target(BASIN_TARGET, seed)
    lora = InitSpec(kind=InitKind.LORA, gamma=BASIN_GAMMA)

    base_configs = {f'base_{i:02d}': _basin_config(seed * BASIN_SEED_STRIDE + i, th, lora)
                    for i in range(base_runs)}
    jobs = {
        run_id: _job(config, target, run_id, _metadata('basin', seed, run_id, BASIN_TARGET))
        for run_id, config in base_configs.items()
    }
    base_results = _run_jobs(jobs, context, 'basin[base]')
    result = ScenarioResult(name='basin', seed=seed, logs=_logs_only(base_results))

    restart_jobs = {}
    base_summary = {}
    for i, (run_id, outcome) in enumerate(base_results.items()):
        config = base_configs[run_id]
        if isinstance(outcome, DivergenceError) or outcome.final.loss > th.basin_converged_loss:
            final_loss = None if isinstance(outcome, DivergenceError) else outcome.final.loss
            logger.warning(f"Basin base run {run_id} did not converge (final loss {final_loss})")
            base_summary[run_id] = {'converged': False, 'final_loss': final_loss}
            continue
        minimum = outcome.final_state
        radius = distance(initialize(config, target), minimum)
        base_summary[run_id] = {'converged': True, 'final_loss': outcome.final.loss,
                                'radius': radius, 'steps': outcome.final.step}
        for j in range(perturbations):
            restart_id = f'{run_id}/perturb_{j:02d}'
            start = perturb(minimum, radius, (seed, PERTURBATION_STREAM, i, j))
            meta = _metadata('basin', seed, restart_id, BASIN_TARGET)
            restart_jobs[restart_id] = (
                lambda m=minimum, s=start, c=config, rid=restart_id, md=meta:
                basin_restart(m, s, target, c, rid, md, th))

    restarts = _run_jobs(restart_jobs, context, 'basin[restart]')
    basin_results: List[BasinResult] = []
    for restart_id, outcome in restarts.items():
        if isinstance(outcome, DivergenceError):
            basin_results.append(BasinResult(run_id=restart_id, converged=False, final_loss=float('inf'),
                                             initial_distance=0.0, final_distance=float('inf')))
            continue
        log, basin = outcome
        result.logs[restart_id] = log
        basin_results.append(basin)

    result.tables['basin'] = [b.to_dict() for b in basin_results]
    decrements = [b.decrement for b in basin_results]
    result.summary = {
        'base_runs': base_summary,
        'restarts': len(basin_results),
        'converged_restarts': sum(b.converged for b in basin_results),
        'min_decrement': min(decrements) if decrements else None,
        'max_final_loss': max((b.final_loss for b in basin_results), default=None)
    }
    result.checks['base_runs_converged'] = all(s['converged'] for s in base_summary.values())
    result.checks['restarts_converged'] = bool(basin_results) and all(b.converged for b in basin_results)
    result.checks['decrements_positive'] = bool(decrements) and min(decrements) > 0
    return result

def drift_block_problem(a: float, b: float) -> tuple:
    """Scalar blocks a I, b I padded into 4 x 2 and 2 x 4 against sigma I_3 padded into 4 x 4"""
    m = DRIFT_BLOCK['m']
    k = DRIFT_BLOCK['rank']
    target = TargetMatrix.from_bases(np.eye(m)[:, :DRIFT_BLOCK['target_rank']],
                                     [DRIFT_BLOCK['sigma']] * DRIFT_BLOCK['target_rank'], np.eye(m))
    state = FactorState(factors=[a * np.eye(m)[:, :k], b * np.eye(m)[:k, :]])
    return target, state

@measure_time
def scenario_invariant_drift(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Balancedness drift of GD and SpecSmoothed from the block construction and a LoRA start"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    block_target, block_state = drift_block_problem(DRIFT_BLOCK['a'], DRIFT_BLOCK['b'])
    lora_target = _target(REFERENCE_TARGET, seed)
    block_init = InitSpec(kind=InitKind.EXPLICIT, explicit_factors=tuple(block_state.factors))

    setups = {
        'block': (block_target, dict(init=block_init), None),
        'lora': (lora_target, {}, REFERENCE_TARGET)
    }
    jobs = {}
    for name, (target, init_changes, spec) in setups.items():
        for method in (Method.GD, Method.SPEC_SMOOTHED):
            run_id = f'{name}_{method.value}'
            config = reference_config(seed, method, eta=th.drift_eta, max_steps=th.drift_steps, **init_changes)
            jobs[run_id] = _job(config, target, run_id, _metadata('invariant_drift', seed, run_id, spec))
    results = _run_jobs(jobs, context, 'invariant_drift')
    result = ScenarioResult(name='invariant_drift', seed=seed, logs=_logs_only(results))

    max_drift = {run_id: float(diagnostics.balancedness_drift(log).max()) for run_id, log in result.logs.items()}
    a = DRIFT_BLOCK['a']
    _, symmetric = drift_block_problem(a, a)
    smoothed = reference_config(seed, Method.SPEC_SMOOTHED)
    symmetric_rate = float(np.linalg.norm(diagnostics.balancedness_rate(symmetric, block_target, smoothed)))
    block_rate = float(np.linalg.norm(diagnostics.balancedness_rate(block_state, block_target, smoothed)))

    result.summary = {'max_drift': max_drift, 'symmetric_rate': symmetric_rate, 'block_rate': block_rate}
    for name in setups:
        gd = max_drift.get(f'{name}_GD')
        spec = max_drift.get(f'{name}_SpecSmoothed')
        result.checks[f'{name}_gd_conserved'] = _le(gd, th.gd_drift_bound)
        result.checks[f'{name}_spectral_drifts'] = (
            gd is not None and spec is not None and spec > 0 and spec >= th.drift_ratio * gd)
    result.checks['symmetric_rate_vanishes'] = symmetric_rate <= th.symmetric_drift_rate
    return result

@measure_time
def scenario_regularized(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """l2-regularized SpecSmoothed runs converge to the stationary point with D = Sigma - lambda I"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    lams = context.options.get('lam', REGULARIZATION_VALUES)
    lams = tuple(lams) if isinstance(lams, (list, tuple)) else (float(lams),)
    target = _target(REFERENCE_TARGET, seed)
    configs = {
        f'lambda_{lam:g}': stable_config(seed, th, lam=lam, max_steps=LONG_RUN_STEPS,
                                         stop_grad_norm=th.regularized_gradient_norm, log_stride=50)
        for lam in lams
    }
    jobs = {
        run_id: _job(config, target, run_id, _metadata('regularized', seed, run_id, REFERENCE_TARGET))
        for run_id, config in configs.items()
    }
    results = _run_jobs(jobs, context, 'regularized')
    result = ScenarioResult(name='regularized', seed=seed, logs=_logs_only(results))

    summaries = {}
    for lam in lams:
        run_id = f'lambda_{lam:g}'
        log = result.logs.get(run_id)
        if log is None:
            result.checks[f'{run_id}_converged'] = False
            continue
        state = log.final_state
        grad = gradient_norm(state, target, lam)
        svals = singular_values(product(state))
        reference = singular_values(product(regularized_stationary_point(target, lam, target.rank)))
        observed = np.zeros(target.rank)
        observed[:min(svals.size, target.rank)] = svals[:target.rank]
        expected = np.zeros(target.rank)
        expected[:reference.size] = reference
        retained = target.sigma > lam
        summaries[run_id] = {
            'gradient_norm': grad,
            'singular_values': observed.tolist(),
            'expected_singular_values': expected.tolist(),
            'final_loss': log.final.loss,
            'steps': log.final.step
        }
        result.checks[f'{run_id}_converged'] = grad <= th.regularized_gradient_norm
        result.checks[f'{run_id}_retained_modes'] = bool(np.all(
            np.abs(observed[retained] - expected[retained]) <= th.regularized_sigma_tolerance))
        if not np.all(retained):
            result.checks[f'{run_id}_suppressed_modes'] = bool(np.all(observed[~retained] <= th.suppressed_sigma))
    result.summary = {'runs': summaries}
    return result

def rank1_case_summary(frame, sigma: float, gamma: float, alpha: float, beta: float) -> Dict[str, Any]:
    pre = frame[frame['ab'] < SATURATION_FRACTION * sigma]
    gap = (frame['a'] - frame['b']).abs()
    return {
        'gamma': gamma,
        'alpha': alpha,
        'beta': beta,
        'sup_gap': float(gap.max()),
        'sup_derivative_gap': float(rank1_derivative_gap(frame, sigma, beta).max()),
        'final_product_gap': float(abs(frame['ab'].iloc[-1] - sigma)),
        'final_c': float(frame['c'].iloc[-1]),
        'loss_monotone': bool(np.all(np.diff(frame['loss'].to_numpy()) <= 1e-15)),
        'c_nonincreasing': bool(np.all(np.diff(frame['c'].to_numpy()) <= 1e-15)
                                and frame['c'].min() >= -1e-12),
        'm_negative_before_saturation': bool((pre['m'] < 0).all()),
        'assumption_violations': check_rank1_assumption(sigma, gamma, alpha, beta),
        'steps': len(frame) - 1
    }

@measure_time
def scenario_rank1_ode(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Rank-1 smoothed flow over a grid of initialization scale, alignment and smoothing"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    cases = {}
    for gamma in RANK1_GAMMAS:
        cases[f'gamma_{gamma:g}_alpha_{RANK1_ALPHA:g}'] = (gamma, RANK1_ALPHA, DEFAULT_SMOOTHING_BETA)
    cases['gamma_1e-03_alpha_1'] = (1e-3, 1.0, DEFAULT_SMOOTHING_BETA)
    cases['gamma_1e-03_beta_1e-06'] = (1e-3, RANK1_ALPHA, 1e-6)

    def job(gamma, alpha, beta):
        init = Rank1State.lora_start(RANK1_SIGMA, gamma, alpha, beta)
        return integrate_rank1(init, RANK1_T_END, RANK1_DT)

    frames = _run_jobs({case: (lambda p=params: job(*p)) for case, params in cases.items()},
                       context, 'rank1_ode')
    result = ScenarioResult(name='rank1_ode', seed=seed)
    summaries = {case: rank1_case_summary(frames[case], RANK1_SIGMA, *cases[case]) for case in cases}
    result.tables = dict(frames)
    result.summary = {'sigma': RANK1_SIGMA, 'cases': summaries}

    main = summaries[f'gamma_{1e-3:g}_alpha_{RANK1_ALPHA:g}']
    sweep = [summaries[f'gamma_{g:g}_alpha_{RANK1_ALPHA:g}']['sup_gap'] for g in RANK1_GAMMAS]
    degenerate = summaries['gamma_1e-03_alpha_1']
    result.checks['final_product_gap'] = main['final_product_gap'] <= th.rank1_final_gap
    result.checks['final_c'] = main['final_c'] <= th.rank1_final_c
    result.checks['sup_gap_bound'] = main['sup_gap'] <= th.rank1_sup_gap_factor * main['gamma']
    result.checks['sup_gap_decreases_with_gamma'] = all(x > y for x, y in zip(sweep, sweep[1:]))
    result.checks['sup_gap_shrink_factor'] = sweep[1] >= th.rank1_shrink_factor * sweep[2]
    result.checks['loss_monotone'] = all(s['loss_monotone'] for s in summaries.values())
    result.checks['c_nonincreasing'] = all(s['c_nonincreasing'] for s in summaries.values())
    result.checks['m_negative_before_saturation'] = all(
        s['m_negative_before_saturation'] for s in summaries.values())
    result.checks['assumption_holds'] = all(not s['assumption_violations'] for s in summaries.values())
    result.checks['degenerate_alpha_one'] = (
        float(frames['gamma_1e-03_alpha_1']['c'].abs().max()) == 0.0
        and degenerate['sup_gap'] <= 1e-3 * (1 + 1e-9))
    return result

@measure_time
def scenario_spectral_init(seed: int, context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Spectral initialization: the matrix run stays diagonal in the core and tracks the mode pairs"""
    context = context or ScenarioContext.from_system_config()
    th = context.thresholds
    target = _target(REFERENCE_TARGET, seed)
    scale = (SPECTRAL_INIT_SCALE,) * target.rank
    config = RunConfig(method=Method.SPEC_SMOOTHED, beta=DEFAULT_SMOOTHING_BETA, eta=SPECTRAL_INIT_ETA,
                       max_steps=SPECTRAL_STEPS, seed=seed,
                       init=InitSpec(kind=InitKind.SPECTRAL, spectral_sigma_a=scale, spectral_sigma_b=scale))

    jobs = {'matrix': _job(config, target, 'matrix', _metadata('spectral_init', seed, 'matrix', REFERENCE_TARGET))}
    for i, sigma_i in enumerate(target.sigma):
        pair = ModePair(sa=SPECTRAL_INIT_SCALE, sb=SPECTRAL_INIT_SCALE, sigma_i=float(sigma_i),
                        beta=DEFAULT_SMOOTHING_BETA)
        jobs[f'mode_{i + 1}'] = (lambda p=pair: integrate_mode_pair(p, MODE_PAIR_T_END, SPECTRAL_INIT_ETA))
    for sigma_i in (3.0, 1.0):
        pair = ModePair(sa=SPECTRAL_INIT_SCALE, sb=SPECTRAL_INIT_SCALE, sigma_i=sigma_i,
                        beta=DEFAULT_SMOOTHING_BETA)
        jobs[f'pair_sigma_{sigma_i:g}'] = (lambda p=pair: integrate_mode_pair(p, MODE_PAIR_T_END, SPECTRAL_INIT_ETA))
    outcomes = _run_jobs(jobs, context, 'spectral_init')

    result = ScenarioResult(name='spectral_init', seed=seed)
    matrix_log = outcomes['matrix']
    if isinstance(matrix_log, DivergenceError):
        result.checks['matrix_run_finite'] = False
        return result
    result.logs['matrix'] = matrix_log
    result.tables = {run_id: frame for run_id, frame in outcomes.items() if run_id != 'matrix'}

    times = matrix_log.times()
    d = matrix_log.core_matrix('d')
    max_mismatch = 0.0
    mode_summaries = {}
    for i, sigma_i in enumerate(target.sigma):
        frame = outcomes[f'mode_{i + 1}']
        pre = d[:, i] <= PRE_SATURATION_FRACTION * sigma_i
        predicted = np.interp(times[pre], frame['t'], frame['product'])
        mismatch = float(np.max(np.abs(predicted - d[pre, i]))) if pre.any() else 0.0
        max_mismatch = max(max_mismatch, mismatch)
        spread = (frame['sa'] - frame['sb']).abs()
        mode_summaries[f'mode_{i + 1}'] = {
            'matrix_mismatch': mismatch,
            'final_product_gap': float(abs(frame['product'].iloc[-1] - sigma_i)),
            'max_spread_growth': float(spread.max() - spread.iloc[0])
        }

    slopes = []
    for sigma_i in (3.0, 1.0):
        frame = outcomes[f'pair_sigma_{sigma_i:g}']
        pre = frame[frame['product'] <= PRE_SATURATION_FRACTION * 1.0]
        slopes.append(diagnostics.linear_fit(pre['t'], np.sqrt(pre['product']))[0])

    off_diagonal = max(r.core.off_g_fro for r in matrix_log.records)
    result.summary = {
        'modes': mode_summaries,
        'max_matrix_mismatch': max_mismatch,
        'max_off_diagonal': off_diagonal,
        'decoupled_slopes': slopes
    }
    result.checks['core_stays_diagonal'] = off_diagonal <= th.decoupled_offdiag_tolerance
    result.checks['matrix_tracks_mode_pairs'] = max_mismatch <= th.spectral_match_tolerance
    result.checks['mode_pairs_converge'] = all(
        s['final_product_gap'] <= th.mode_pair_final_gap for s in mode_summaries.values())
    result.checks['mode_pair_spread_bounded'] = all(
        s['max_spread_growth'] <= 1e-9 for s in mode_summaries.values())
    result.checks['decoupled_slopes_equal'] = abs(slopes[0] - slopes[1]) <= th.decoupled_slope_gap
    return result

def run_custom(config: RunConfig, target_spec: TargetSpec, seed: int,
               context: Optional[ScenarioContext] = None) -> ScenarioResult:
    """Single run from a raw configuration document"""
    target = _target(target_spec, seed)
    log = run(config, target, label='custom', metadata=_metadata('custom', seed, 'custom', target_spec))
    result = ScenarioResult(name='custom', seed=seed, logs={'custom': log})
    result.summary = {
        'final_loss': log.final.loss if log.records else None,
        'steps': log.final_state.step_index,
        'final_singular_values': list(log.final.product_singular_values) if log.records else []
    }
    return result

class ScenarioRegistry:
    """Named scenarios with descriptions and default configurations"""

    def __init__(self):
        self._scenarios: Dict[str, Scenario] = {}

    def register(self, scenario: Scenario):
        if scenario.name in self._scenarios:
            raise InvalidArgumentError(f"Scenario {scenario.name} is already registered")
        self._scenarios[scenario.name] = scenario

    def get(self, name: str) -> Scenario:
        try:
            return self._scenarios[name]
        except KeyError:
            raise InvalidArgumentError(
                f"Unknown scenario {name!r}; available: {', '.join(self.names())}") from None

    def names(self) -> List[str]:
        return sorted(self._scenarios)

    def describe(self) -> List[Dict[str, Any]]:
        return [self._scenarios[name].to_dict() for name in self.names()]

    def __contains__(self, name: str) -> bool:
        return name in self._scenarios

def _build_registry() -> ScenarioRegistry:
    th = AcceptanceThresholds()
    registry = ScenarioRegistry()
    entries = [
        Scenario('uniform_growth', 'SpecExact, SpecSmoothed and GD from one LoRA start: slopes, order, alignment',
                 reference_config(0), REFERENCE_TARGET, scenario_uniform_growth,
                 sweep={'method': ('GD', 'SpecExact', 'SpecSmoothed')},
                 summary_stats=('slopes', 'order', 'alignment_off_g', 'late_phase_r2')),
        Scenario('loss_comparison', 'Steps to a common loss floor, SpecSmoothed against GD',
                 stable_config(0, th), REFERENCE_TARGET, scenario_loss_comparison,
                 sweep={'method': ('GD', 'SpecSmoothed')}, summary_stats=('steps_to_loss',)),
        Scenario('momentum_sweep', 'Momentum sweep with exact or Newton-Schulz orthogonalization',
                 reference_config(0), REFERENCE_TARGET, scenario_momentum_sweep,
                 sweep={'mu': MOMENTUM_VALUES}, summary_stats=('slope_gap', 'tail_min_loss')),
        Scenario('rank_sweep', 'LoRA ranks 1-4 against the best rank-r approximation',
                 stable_config(0, th), REFERENCE_TARGET, scenario_rank_sweep,
                 sweep={'rank': RANK_VALUES}, summary_stats=('distance_to_best_rank', 'final_loss')),
        Scenario('depth_sweep', 'Depth-L chains: linear growth of L-th root singular values',
                 reference_config(0), REFERENCE_TARGET, scenario_depth_sweep,
                 sweep={'depth': DEPTH_VALUES}, summary_stats=('slopes', 'r2')),
        Scenario('basin', 'Perturbed restarts around converged minima (9 x 9, r = 4)',
                 _basin_config(0, th, InitSpec(gamma=BASIN_GAMMA)), BASIN_TARGET, scenario_basin,
                 replicates=th.base_runs * th.perturbations,
                 summary_stats=('converged_restarts', 'min_decrement')),
        Scenario('invariant_drift', 'Balancedness drift of GD against SpecSmoothed',
                 reference_config(0, Method.SPEC_SMOOTHED, eta=th.drift_eta, max_steps=th.drift_steps),
                 REFERENCE_TARGET, scenario_invariant_drift,
                 sweep={'method': ('GD', 'SpecSmoothed')}, summary_stats=('max_drift', 'symmetric_rate')),
        Scenario('regularized', 'l2-regularized SpecSmoothed and its stationary point',
                 stable_config(0, th, lam=0.1), REFERENCE_TARGET, scenario_regularized,
                 sweep={'lam': REGULARIZATION_VALUES}, summary_stats=('gradient_norm', 'singular_values')),
        Scenario('rank1_ode', 'Rank-1 scalar flow over initialization scale and alignment',
                 reference_config(0, Method.SPEC_SMOOTHED), None, scenario_rank1_ode,
                 sweep={'gamma': RANK1_GAMMAS}, summary_stats=('sup_gap', 'final_product_gap', 'final_c')),
        Scenario('spectral_init', 'Spectral initialization against the decoupled mode pairs',
                 reference_config(0, Method.SPEC_SMOOTHED, eta=SPECTRAL_INIT_ETA), REFERENCE_TARGET,
                 scenario_spectral_init, summary_stats=('max_matrix_mismatch', 'max_off_diagonal'))
    ]
    for scenario in entries:
        registry.register(scenario)
    return registry

_registry = None

def get_registry() -> ScenarioRegistry:
    global _registry
    if _registry is None:
        _registry = _build_registry()
    return _registry

class ExperimentService:
    """Scenario and document runs on top of the registry"""

    def __init__(self, registry: Optional[ScenarioRegistry] = None):
        self.registry = registry or get_registry()

    def list_scenarios(self) -> List[Dict[str, Any]]:
        return self.registry.describe()

    def run_scenario(self, name: str, seed: int = 0, overrides: Optional[Dict[str, Any]] = None) -> ScenarioResult:
        """Run a registered scenario; overrides set context fields or scenario options"""
        scenario = self.registry.get(name)
        context = ScenarioContext.from_system_config(**(overrides or {}))
        logger.info(f"Running scenario {name} (seed {seed}, workers {context.workers}, ci_scale {context.ci_scale})")
        result = scenario.runner(seed, context)
        failed = result.failed_checks()
        if failed:
            logger.info(f"Scenario {name} finished with failed checks: {', '.join(failed)}")
        else:
            logger.info(f"Scenario {name} finished; {len(result.checks)} checks passed")
        return result

    def run_document(self, document: ConfigDocument, scenario: Optional[str] = None,
                     seed: Optional[int] = None, full_scale: bool = False) -> ScenarioResult:
        """Run what a resolved document names; explicit scenario and seed win over the document"""
        name = scenario or document.scenario
        seed = document.seed if seed is None else seed
        overrides = dict(document.overrides)
        overrides['ci_scale'] = document.ci_scale and not full_scale
        if document.workers is not None:
            overrides['workers'] = document.workers

        if name != CUSTOM_SCENARIO:
            return self.run_scenario(name, seed, overrides)
        if document.run is None:
            raise ConfigurationError(f"scenario {CUSTOM_SCENARIO} needs run keys in the document", key='scenario')
        return run_custom(document.run, document.target, seed, ScenarioContext.from_system_config(**overrides))

def run_scenario(name: str, seed: int = 0, overrides: Optional[Dict[str, Any]] = None) -> ScenarioResult:
    return ExperimentService().run_scenario(name, seed, overrides)
