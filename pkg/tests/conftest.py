"""Shared fixtures for the test suite"""

import numpy as np
import pytest

from shared.utils.config import reset_config_manager
from specgf.models.problem import FactorState, TargetMatrix
from specgf.models.run import InitKind, InitSpec, Method, RunConfig
from specgf.models.trajectory import CoreSnapshot, StepDiagnostics, TrajectoryLog
from specgf.services.problem import construct_target

@pytest.fixture(autouse=True)
def fresh_config(monkeypatch, tmp_path):
    """Every test sees built-in defaults: no system file, no environment overrides"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv('SPECGF_WORKERS', raising=False)
    monkeypatch.delenv('SPECGF_LOG_LEVEL', raising=False)
    reset_config_manager()
    yield
    reset_config_manager()

@pytest.fixture
def small_target() -> TargetMatrix:
    return construct_target(6, 5, [3.0, 2.0, 1.0], seed=0)

@pytest.fixture
def exact_minimum(small_target) -> FactorState:
    """Balanced global minimum A = U sqrt(S), B = sqrt(S) V^T"""
    root = np.sqrt(small_target.sigma)
    return FactorState(factors=[small_target.u_r * root, (small_target.v_r * root).T])

@pytest.fixture
def small_config() -> RunConfig:
    return RunConfig(method=Method.SPEC_SMOOTHED, beta=1e-8, eta=0.01, max_steps=50,
                     init=InitSpec(kind=InitKind.LORA, gamma=1e-3), seed=0)

def make_log(d_rows, sigma, eta=0.01, losses=None, steps=None) -> TrajectoryLog:
    """Synthetic two-factor log whose core diagonal follows d_rows"""
    sigma = np.asarray(sigma, dtype=float)
    d_rows = np.asarray(d_rows, dtype=float)
    steps = list(steps) if steps is not None else list(range(1, len(d_rows) + 1))
    if losses is None:
        losses = [0.5 * float(np.sum((d - sigma) ** 2)) for d in d_rows]
    log = TrajectoryLog(metadata={
        'label': 'synthetic',
        'config': {'eta': eta, 'depth': 2, 'rank': None},
        'target': {'m': 4, 'n': 4, 'sigma': sigma.tolist()}
    })
    for step, d, loss in zip(steps, d_rows, losses):
        core = CoreSnapshot(d=d.copy(), e=d - sigma, off_g_fro=0.0, xz_perp_fro=0.0)
        log.append(StepDiagnostics(
            step=step, time=step * eta, loss=float(loss),
            product_singular_values=tuple(sorted((float(v) for v in d), reverse=True)),
            core=core, active_set=(), effective_rank=1.0, balancedness_drift=0.0,
            per_factor_fro_norms=(0.0, 0.0)))
    return log

@pytest.fixture
def synthetic_log_factory():
    return make_log
