"""Tests for initialization, the update steps and the run loop"""

import numpy as np
import pytest

from shared.utils.common import DivergenceError, InvalidArgumentError
from specgf.models.problem import FactorState, TargetMatrix
from specgf.models.run import InitKind, InitSpec, Method, RunConfig
from specgf.models.trajectory import TrajectoryLog
from specgf.services.diagnostics import (
    active_window, balancedness_drift, column_space_leakage, default_epsilon, max_loss_increase,
    plateau_loss_bound
)
from specgf.services.linalg import orthogonalize_exact, orthogonalize_smoothed, sample_gaussian
from specgf.services.optimizer import chain_shapes, distance, initialize, run, step, update_directions
from specgf.services.problem import gradients

def test_chain_shapes():
    assert chain_shapes(6, 5, 3, 2) == [(6, 3), (3, 5)]
    assert chain_shapes(6, 5, 3, 4) == [(6, 3), (3, 3), (3, 3), (3, 5)]

def test_lora_init_zeroes_the_first_factor(small_target, small_config):
    state = initialize(small_config, small_target)

    assert not np.any(state.a)
    assert state.b.shape == (3, 5)
    assert 0 < np.abs(state.b).max() < 1e-2
    assert state.momentum is None

def test_lora_init_shares_the_last_factor_across_depths(small_target, small_config):
    two = initialize(small_config, small_target)
    four = initialize(small_config.with_updates(depth=4), small_target)

    np.testing.assert_array_equal(two.b, four.b)
    assert four.depth == 4

def test_lora_init_respects_rank_override(small_target, small_config):
    state = initialize(small_config.with_updates(rank=2), small_target)

    assert state.rank == 2

def test_momentum_buffers_start_at_zero(small_target):
    config = RunConfig(method=Method.MUON_NS, mu=0.9)
    state = initialize(config, small_target)

    assert all(not np.any(m) for m in state.momentum)

def test_spectral_init_keeps_the_core_diagonal(small_target):
    config = RunConfig(init=InitSpec(kind=InitKind.SPECTRAL, spectral_sigma_a=(0.1, 0.2, 0.3),
                                     spectral_sigma_b=(0.3, 0.2, 0.1)))
    state = initialize(config, small_target)
    g = small_target.u_r.T @ state.a @ state.b @ small_target.v_r

    np.testing.assert_allclose(g, np.diag([0.03, 0.04, 0.03]), atol=1e-14)

@pytest.mark.parametrize("changes", [
    {'depth': 3},
    {'rank': 4},
])
def test_spectral_init_rejects_unsupported_shapes(small_target, changes):
    config = RunConfig(init=InitSpec(kind=InitKind.SPECTRAL, spectral_sigma_a=(0.1,) * 3,
                                     spectral_sigma_b=(0.1,) * 3), **changes)

    with pytest.raises(InvalidArgumentError):
        initialize(config, small_target)

def test_spectral_init_rejects_large_diagonals(small_target):
    config = RunConfig(init=InitSpec(kind=InitKind.SPECTRAL, spectral_sigma_a=(0.1, 0.1, 1.5),
                                     spectral_sigma_b=(0.1, 0.1, 0.1)))

    with pytest.raises(InvalidArgumentError):
        initialize(config, small_target)

def test_explicit_init_checks_the_chain(small_target):
    config = RunConfig(init=InitSpec(kind=InitKind.EXPLICIT, explicit_factors=(np.ones((6, 2)),)))

    with pytest.raises(InvalidArgumentError):
        initialize(config, small_target)

def test_gd_step_is_a_gradient_step(small_target, small_config):
    config = small_config.with_updates(method=Method.GD, beta=0.0)
    state = initialize(config, small_target)
    grads = gradients(state, small_target)

    nxt = step(state, small_target, config)

    for before, after, g in zip(state.factors, nxt.factors, grads):
        np.testing.assert_allclose(after, before - config.eta * g)
    assert nxt.step_index == 1

@pytest.mark.parametrize("method,direction", [
    (Method.SPEC_EXACT, orthogonalize_exact),
    (Method.SPEC_SMOOTHED, lambda g: orthogonalize_smoothed(g, 1e-8)),
])
def test_spectral_directions_orthogonalize_each_gradient(small_target, method, direction):
    config = RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0)
    state = FactorState(factors=[np.full((6, 3), 0.1), np.full((3, 5), -0.2)])

    directions, buffers = update_directions(state, small_target, config)

    assert buffers is None
    for d, g in zip(directions, gradients(state, small_target)):
        np.testing.assert_allclose(d, direction(g), atol=1e-12)

@pytest.mark.parametrize("method", [Method.SPEC_EXACT, Method.SPEC_SMOOTHED, Method.MUON_NS])
def test_first_spectral_step_leaves_b_unchanged_from_lora_start(small_target, method):
    config = RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0)
    state = initialize(config, small_target)

    nxt = step(state, small_target, config)

    np.testing.assert_array_equal(nxt.b, state.b)
    assert np.any(nxt.a)

def test_momentum_accumulates_gradients(small_target):
    config = RunConfig(method=Method.SPEC_EXACT, mu=0.5)
    state = initialize(config, small_target)
    first = step(state, small_target, config)
    grads = gradients(first, small_target)

    _, buffers = update_directions(first, small_target, config)

    for buf, mom, g in zip(buffers, first.momentum, grads):
        np.testing.assert_allclose(buf, g + 0.5 * mom)

def test_divergence_reports_step_and_partial_log(small_target):
    config = RunConfig(method=Method.GD, eta=10.0, max_steps=500,
                       init=InitSpec(kind=InitKind.EXPLICIT,
                                     explicit_factors=(np.ones((6, 3)), np.ones((3, 5)))))

    with pytest.raises(DivergenceError) as excinfo:
        run(config, small_target)

    assert excinfo.value.step >= 1
    assert isinstance(excinfo.value.log, TrajectoryLog)
    assert len(excinfo.value.log) == excinfo.value.step - 1

def test_run_records_every_step_when_stopping_is_off(small_target, small_config):
    log = run(small_config, small_target)

    assert len(log) == small_config.max_steps
    np.testing.assert_array_equal(log.steps(), np.arange(1, small_config.max_steps + 1))
    assert log.final_state.step_index == small_config.max_steps
    np.testing.assert_allclose(log.times(), log.steps() * small_config.eta)

def test_run_honours_the_log_stride(small_target, small_config):
    log = run(small_config.with_updates(max_steps=10, log_stride=3), small_target)

    assert log.steps().tolist() == [3, 6, 9, 10]

def test_run_stopping_at_the_start_yields_one_step_zero_record(small_target, small_config):
    log = run(small_config.with_updates(stop_loss=1e9), small_target)

    assert log.steps().tolist() == [0]
    assert log.final_state.step_index == 0

@pytest.mark.parametrize("changes", [{"stop_loss": np.inf}, {"stop_grad_norm": np.inf}])
def test_infinite_stopping_thresholds_are_off(small_target, small_config, changes):
    log = run(small_config.with_updates(max_steps=5, **changes), small_target)

    assert log.steps().tolist() == [1, 2, 3, 4, 5]

def test_run_stops_on_loss(small_target):
    config = RunConfig(method=Method.GD, eta=0.05, max_steps=20000, stop_loss=1e-6, log_stride=100)

    log = run(config, small_target)

    assert log.final.loss <= 1e-6
    assert log.final.step < 20000

def test_run_metadata_reproduces_the_run(small_target, small_config):
    log = run(small_config, small_target, label='labelled', metadata={'extra': 1})
    replay = run(RunConfig.from_dict(log.metadata['config']), small_target)

    assert log.metadata['label'] == 'labelled'
    assert log.metadata['extra'] == 1
    np.testing.assert_array_equal(log.losses(), replay.losses())

def test_distance_between_chains():
    a = FactorState(factors=[np.zeros((2, 1)), np.zeros((1, 2))])
    b = FactorState(factors=[np.ones((2, 1)), np.ones((1, 2))])

    assert distance(a, b) == pytest.approx(2.0)
    with pytest.raises(InvalidArgumentError):
        distance(a, FactorState(factors=[np.zeros((2, 2)), np.zeros((2, 2))]))

def scalar_problem(sigma):
    return TargetMatrix.from_bases(np.eye(1), [sigma], np.eye(1))

def scalar_config(method, a, b, **changes):
    changes.setdefault('eta', 0.1)
    return RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0,
                     init=InitSpec(kind=InitKind.EXPLICIT,
                                   explicit_factors=(np.array([[a]]), np.array([[b]]))), **changes)

@pytest.mark.parametrize("method", [Method.GD, Method.SPEC_EXACT, Method.SPEC_SMOOTHED])
def test_exact_minimum_is_a_fixed_point(method):
    target = scalar_problem(4.0)
    config = scalar_config(method, 2.0, 2.0)
    state = initialize(config, target)

    nxt = step(state, target, config)

    assert nxt.a[0, 0] == 2.0
    assert nxt.b[0, 0] == 2.0

@pytest.mark.parametrize("method,expected,tolerance", [
    (Method.GD, 1.1, 1e-15),
    (Method.SPEC_SMOOTHED, 1.1, 5e-9),
])
def test_scalar_step(method, expected, tolerance):
    target = scalar_problem(2.0)
    config = scalar_config(method, 1.0, 1.0)

    nxt = step(initialize(config, target), target, config)

    assert nxt.a[0, 0] == pytest.approx(expected, abs=tolerance)
    assert nxt.b[0, 0] == pytest.approx(expected, abs=tolerance)

@pytest.mark.parametrize("method", [Method.GD, Method.SPEC_EXACT, Method.SPEC_SMOOTHED])
def test_lora_start_keeps_a_in_the_target_column_space(small_target, method):
    config = RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0, max_steps=100)

    log = run(config, small_target)

    assert column_space_leakage(log.final_state, small_target) <= 1e-8

@pytest.mark.parametrize("method", [Method.SPEC_EXACT, Method.SPEC_SMOOTHED])
@pytest.mark.parametrize("seed", range(5))
def test_spectral_directions_are_bounded_by_root_rank(small_target, method, seed):
    config = RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0)
    state = FactorState(factors=[sample_gaussian(6, 3, (seed, 1)), sample_gaussian(3, 5, (seed, 2))])

    directions, _ = update_directions(state, small_target, config)

    assert all(np.linalg.norm(d) <= np.sqrt(3) + 1e-9 for d in directions)

def test_gd_conserves_balancedness_over_a_long_run(small_target):
    config = RunConfig(method=Method.GD, eta=1e-3, max_steps=1000, log_stride=100)

    log = run(config, small_target)

    assert balancedness_drift(log).max() <= 1e-6

@pytest.mark.parametrize("method", [Method.SPEC_EXACT, Method.SPEC_SMOOTHED])
def test_spectral_runs_descend_through_the_growth_phase(small_target, method):
    config = RunConfig(method=method, beta=1e-8 if method is Method.SPEC_SMOOTHED else 0.0, max_steps=300)
    log = run(config, small_target)
    window = active_window(log, default_epsilon(small_target), 1e-2)

    assert window is not None
    assert max_loss_increase(log, window) <= 1e-9

def exact_lattice_errors(x0, sigma=8.0, eta=0.01, steps=600, tail=100):
    target = scalar_problem(sigma)
    config = scalar_config(Method.SPEC_EXACT, x0, x0, eta=eta)
    state = initialize(config, target)
    errors = []
    for _ in range(steps):
        state = step(state, target, config)
        errors.append(state.a[0, 0] * state.b[0, 0] - sigma)
    return np.array(errors[-tail:])

def test_exact_steps_settle_on_a_two_point_lattice():
    errors = exact_lattice_errors(0.005)

    # factors sit at 2.825 and 2.835 around sqrt(8)
    np.testing.assert_allclose(np.unique(np.round(errors, 6)), [-0.019375, 0.037225], atol=1e-6)
    assert 0.5 * np.min(errors ** 2) > 1e-4
    assert 0.5 * np.max(errors ** 2) <= plateau_loss_bound(0.01, 0.0, [8.0])

def test_exact_lattice_swing_can_exceed_a_narrow_ordering_band():
    errors = exact_lattice_errors(0.00754)

    assert np.max(np.abs(errors)) > 0.05
    assert np.max(np.abs(errors)) <= 2 * 0.01 * np.sqrt(8.0) + 1e-9
