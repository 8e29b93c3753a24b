"""Tests for state and trajectory diagnostics"""

import numpy as np
import pytest

from shared.utils.common import ConvergenceError, InvalidArgumentError, UnsupportedOperationError
from specgf.models.problem import FactorState
from specgf.models.run import Method, RunConfig
from specgf.models.trajectory import CoreSnapshot
from specgf.services import diagnostics
from specgf.services.optimizer import initialize, run
from specgf.services.problem import construct_target, loss

def test_core_variables_at_the_exact_minimum(small_target, exact_minimum):
    core = diagnostics.core_variables(exact_minimum, small_target)

    np.testing.assert_allclose(core.d, small_target.sigma, atol=1e-12)
    np.testing.assert_allclose(core.e, 0.0, atol=1e-12)
    assert core.off_g_fro <= 1e-12
    assert core.xz_perp_fro <= 1e-12
    assert core.compact().g is None

def test_core_variables_need_two_factors(small_target):
    state = FactorState(factors=[np.zeros((6, 3)), np.eye(3), np.zeros((3, 5))])

    with pytest.raises(UnsupportedOperationError):
        diagnostics.core_variables(state, small_target)

def test_core_length_is_the_smaller_rank(small_target):
    state = FactorState(factors=[np.ones((6, 2)), np.ones((2, 5))])

    assert diagnostics.core_variables(state, small_target).d.shape == (2,)

def test_balanced_minimum_has_zero_balancedness(exact_minimum):
    np.testing.assert_allclose(diagnostics.balancedness(exact_minimum), 0.0, atol=1e-12)

def test_gradient_flow_conserves_balancedness(small_target):
    state = FactorState(factors=[np.linspace(-1, 1, 18).reshape(6, 3), np.linspace(0, 2, 15).reshape(3, 5)])
    config = RunConfig(method=Method.GD)

    rate = diagnostics.balancedness_rate(state, small_target, config)

    np.testing.assert_allclose(rate, 0.0, atol=1e-10)

@pytest.mark.parametrize("values,expected", [
    ([1.0, 1.0, 1.0], 3.0),
    ([5.0], 1.0),
    ([2.0, 0.0], 1.0),
])
def test_effective_rank(values, expected):
    assert diagnostics.effective_rank(values) == pytest.approx(expected)

def test_effective_rank_needs_a_positive_value():
    with pytest.raises(InvalidArgumentError):
        diagnostics.effective_rank([0.0, 0.0])

def test_snapshot_of_lora_start(small_target, small_config):
    state = initialize(small_config, small_target)

    record = diagnostics.snapshot(state, small_target, small_config, diagnostics.balancedness(state))

    assert record.step == 0
    assert record.product_singular_values == ()
    assert record.effective_rank == 0.0
    assert record.active_set == (1, 2, 3)
    assert record.balancedness_drift == 0.0
    assert record.loss == pytest.approx(0.5 * np.sum(small_target.sigma ** 2))

def test_snapshot_active_set_is_one_based(small_target, exact_minimum, small_config):
    a, b = exact_minimum.factors
    state = FactorState(factors=[a.copy(), b.copy()])
    state.factors[0][:, 2] *= 0.5

    record = diagnostics.snapshot(state, small_target, small_config)

    assert record.active_set == (3,)

def test_snapshot_of_deep_chain_uses_product_spectrum(small_target, small_config):
    config = small_config.with_updates(depth=3)
    state = initialize(config, small_target)

    record = diagnostics.snapshot(state, small_target, config)

    assert record.core is None
    assert record.balancedness_drift is None
    assert len(record.per_factor_fro_norms) == 3

def test_diagonal_surrogate_error_on_diagonal_product():
    snap = CoreSnapshot(d=np.array([1.0, 3.0, 2.0]), e=np.zeros(3), off_g_fro=0.0, xz_perp_fro=0.0)

    assert diagnostics.diagonal_surrogate_error(snap, [3.0, 2.0, 1.0]) == 0.0
    assert diagnostics.diagonal_surrogate_error(snap, [3.0, 2.0]) == pytest.approx(1.0)

def test_surrogate_error_uses_the_greedy_matching():
    snap = CoreSnapshot(d=np.array([3.0, 1.0]), e=np.zeros(2), off_g_fro=0.0, xz_perp_fro=0.0)

    assert diagnostics.diagonal_surrogate_error(snap, [3.5, 2.9]) == pytest.approx(2.5)
    assert diagnostics.sorted_surrogate_error(snap, [3.5, 2.9]) == pytest.approx(1.9)

def test_surrogate_error_on_a_perturbed_diagonal_block():
    g = np.diag([3.0, 1.0]) + 0.01 * np.array([[0.0, 1.0], [1.0, 0.0]])
    snap = CoreSnapshot(d=np.diag(g).copy(), e=np.zeros(2), off_g_fro=0.01 * np.sqrt(2.0), xz_perp_fro=0.0)

    assert diagnostics.diagonal_surrogate_error(snap, np.linalg.svd(g, compute_uv=False)) <= 0.03

def test_surrogate_margin_holds_along_a_run(small_target, small_config):
    log = run(small_config.with_updates(max_steps=200), small_target)

    assert diagnostics.surrogate_margin(log) <= 1e-9

def test_linear_fit():
    t = np.arange(10.0)

    slope, intercept, r2 = diagnostics.linear_fit(t, 2.0 * t + 1.0)
    assert slope == pytest.approx(2.0)
    assert intercept == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)
    assert diagnostics.linear_fit(t, np.full(10, 4.0)) == (0.0, 4.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        diagnostics.linear_fit([1.0], [2.0])

def growth_rows(sigma, steps, eta=0.01, start=0.01):
    """sqrt(d_i) grows at unit speed, then saturates at sigma_i"""
    rows = []
    for step in steps:
        root = start + step * eta
        rows.append(np.minimum(root ** 2, sigma))
    return rows

def test_active_window_covers_the_uniform_growth_phase(synthetic_log_factory):
    sigma = np.array([4.0, 1.0])
    steps = range(1, 301)
    log = synthetic_log_factory(growth_rows(sigma, steps), sigma)

    window = diagnostics.active_window(log, epsilon=0.05, growth_floor=1.5e-2)

    assert window is not None
    start, end = window
    assert start == 12
    assert end == 96
    record = next(r for r in log.records if r.step == end)
    assert record.core.d[1] <= 1.0 - 0.05
    slopes = diagnostics.sqrt_coordinate_slopes(log, window)
    np.testing.assert_allclose(slopes, [1.0, 1.0], atol=1e-9)
    assert diagnostics.max_pairwise_gap(slopes) <= 1e-9

def test_active_window_is_none_without_growth(synthetic_log_factory):
    sigma = np.array([1.0])
    log = synthetic_log_factory([[1e-4]] * 5, sigma)

    assert diagnostics.active_window(log, 0.05, 1e-2) is None

def test_convergence_order_is_smallest_first_for_uniform_growth(synthetic_log_factory):
    sigma = np.array([8.0, 3.0, 0.7])
    log = synthetic_log_factory(growth_rows(sigma, range(1, 400)), sigma)

    assert diagnostics.convergence_order(log, 0.1) == (3, 2, 1)

def test_convergence_order_reports_an_unsettled_mode(synthetic_log_factory):
    sigma = np.array([8.0, 3.0])
    log = synthetic_log_factory(growth_rows(sigma, range(1, 100)), sigma)

    with pytest.raises(ConvergenceError) as excinfo:
        diagnostics.convergence_order(log, 0.1)
    assert excinfo.value.mode == 1

def test_loss_helpers(synthetic_log_factory):
    sigma = np.array([1.0])
    losses = [10.0 ** (-k / 10) for k in range(60)]
    log = synthetic_log_factory([[0.5]] * 60, sigma, losses=losses)

    assert diagnostics.steps_to_loss(log, 1.5e-3) == 30
    assert diagnostics.steps_to_loss(log, 1e-12) is None
    assert diagnostics.max_loss_increase(log) < 0
    slope, r2 = diagnostics.log_loss_fit(log)
    assert slope == pytest.approx(-0.1 / 0.01)
    assert r2 == pytest.approx(1.0)

def test_max_loss_increase_detects_a_bump(synthetic_log_factory):
    log = synthetic_log_factory([[0.5]] * 4, [1.0], losses=[1.0, 0.5, 0.7, 0.1])

    assert diagnostics.max_loss_increase(log) == pytest.approx(0.2)
    assert diagnostics.max_loss_increase(log, (3, 4)) == pytest.approx(-0.6)

def test_nth_root_spectra(synthetic_log_factory):
    log = synthetic_log_factory([[8.0, 1.0]] * 3, [8.0, 1.0])

    np.testing.assert_allclose(diagnostics.nth_root_spectra(log, 3), [[2.0, 1.0]] * 3)

def test_column_space_leakage(small_target, exact_minimum):
    assert diagnostics.column_space_leakage(exact_minimum, small_target) <= 1e-12
    zero = FactorState(factors=[np.zeros((6, 3)), np.ones((3, 5))])
    assert diagnostics.column_space_leakage(zero, small_target) == 0.0

def test_balancedness_drift_of_gd_stays_small():
    target = construct_target(6, 5, [3.0, 2.0, 1.0], seed=1)
    log = run(RunConfig(method=Method.GD, eta=1e-3, max_steps=100), target)

    assert diagnostics.balancedness_drift(log).max() <= 1e-6

def test_alignment_sup_on_reference_run():
    target = construct_target(12, 10, [3.0, 1.0], seed=2)
    config = RunConfig(method=Method.SPEC_SMOOTHED, beta=1e-8, max_steps=150)
    log = run(config, target)

    window = diagnostics.active_window(log, 0.05, 1e-2)
    assert window is not None
    off_g, xz_perp = diagnostics.alignment_sup(log, window)
    assert off_g <= 100 * config.init.gamma
    assert xz_perp <= 100 * config.init.gamma
    assert loss(log.final_state, target).value == pytest.approx(log.final.loss)

def test_plateau_loss_bound_scales_with_the_effective_step():
    base = diagnostics.plateau_loss_bound(0.01, 0.0, [8.0])

    assert base == pytest.approx(1.6e-3)
    assert diagnostics.plateau_loss_bound(0.01, 0.5, [8.0]) == pytest.approx(4 * base)
    assert diagnostics.plateau_loss_bound(0.01, 0.0, [8.0], step_scale=1.3) == pytest.approx(1.69 * base)
    assert diagnostics.plateau_loss_bound(0.01, 0.0, [5.0, 3.0]) == pytest.approx(base)

@pytest.mark.parametrize("eta,mu", [(0.0, 0.0), (0.01, 1.0), (0.01, -0.1)])
def test_plateau_loss_bound_rejects_bad_arguments(eta, mu):
    with pytest.raises(InvalidArgumentError):
        diagnostics.plateau_loss_bound(eta, mu, [1.0])
