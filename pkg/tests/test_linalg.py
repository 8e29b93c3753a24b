"""Tests for the matrix primitives"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shared.utils.common import InvalidArgumentError
from shared.utils.config import AcceptanceThresholds
from specgf.services.linalg import (
    newton_schulz, nuclear_norm, orthogonalize_exact, orthogonalize_smoothed, sample_gaussian,
    sample_orthonormal, singular_values, spectral_norm, svd_compact
)

THRESHOLDS = AcceptanceThresholds()

MAX_DIM = 80
shapes = st.tuples(st.integers(min_value=1, max_value=MAX_DIM), st.integers(min_value=1, max_value=MAX_DIM))
seeds = st.integers(min_value=0, max_value=2 ** 31 - 1)
operator_settings = settings(max_examples=200, deadline=None)

def test_svd_of_positive_diagonal_is_identity_bases():
    triple = svd_compact(np.diag([3.0, 2.0]))

    np.testing.assert_allclose(triple.left_vectors, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(triple.singular_values, [3.0, 2.0])
    np.testing.assert_allclose(triple.right_vectors, np.eye(2), atol=1e-12)

def test_svd_of_zero_matrix_is_empty():
    triple = svd_compact(np.zeros((2, 2)))

    assert triple.rank == 0
    assert triple.left_vectors.shape == (2, 0)
    assert triple.right_vectors.shape == (2, 0)

def test_svd_rejects_non_finite_input():
    with pytest.raises(InvalidArgumentError):
        svd_compact(np.array([[1.0, np.nan]]))

@pytest.mark.slow
@given(shape=shapes, seed=seeds)
@operator_settings
def test_svd_reconstructs_with_orthonormal_bases_and_sign_convention(shape, seed):
    m = sample_gaussian(*shape, seed)
    triple = svd_compact(m)
    u = triple.left_vectors

    assert np.linalg.norm(triple.reconstruct() - m) <= 1e-8 * max(1.0, np.linalg.norm(m))
    np.testing.assert_allclose(u.T @ u, np.eye(triple.rank), atol=1e-10)
    assert np.all(np.diff(triple.singular_values) <= 0)
    pivots = np.argmax(np.abs(u), axis=0)
    assert np.all(u[pivots, np.arange(triple.rank)] >= 0)

def test_rank_deficient_input_keeps_only_nonzero_modes():
    m = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])

    assert svd_compact(m).rank == 1
    np.testing.assert_allclose(singular_values(m), [np.linalg.norm([1, 2, 3]) * np.sqrt(2)])

def test_exact_orthogonalization_of_reference_spectrum_is_identity():
    np.testing.assert_allclose(orthogonalize_exact(np.diag([8.0, 5.0, 3.0, 1.5, 0.7])), np.eye(5), atol=1e-12)

def test_exact_orthogonalization_maps_zero_to_zero():
    assert not np.any(orthogonalize_exact(np.zeros((3, 2))))

@pytest.mark.slow
@given(shape=shapes, seed=seeds, scale=st.floats(min_value=1e-3, max_value=1e3))
@operator_settings
def test_exact_orthogonalization_properties(shape, seed, scale):
    m = sample_gaussian(*shape, seed)
    t = orthogonalize_exact(m)
    svals = np.linalg.svd(t, compute_uv=False)

    assert np.all((np.abs(svals) <= 1e-8) | (np.abs(svals - 1.0) <= THRESHOLDS.orthogonal_tolerance))
    np.testing.assert_allclose(orthogonalize_exact(scale * m), t, atol=1e-8)
    nuclear = nuclear_norm(m)
    assert abs(np.sum(m * t) - nuclear) <= 1e-8 * max(1.0, nuclear)

def test_smoothed_map_of_zero_is_zero():
    assert not np.any(orthogonalize_smoothed(np.zeros((2, 3)), 1e-8))

@pytest.mark.parametrize("sigma,beta", [(2.0, 1e-8), (0.01, 1e-4), (-3.0, 0.5)])
def test_smoothed_map_on_scalars(sigma, beta):
    out = orthogonalize_smoothed(np.array([[sigma]]), beta)

    assert out[0, 0] == pytest.approx(sigma / np.sqrt(sigma ** 2 + beta), rel=1e-12)

@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_smoothed_map_rejects_nonpositive_beta(beta):
    with pytest.raises(InvalidArgumentError):
        orthogonalize_smoothed(np.eye(2), beta)

@pytest.mark.slow
@given(shape=shapes, seed=seeds, beta=st.sampled_from([1e-8, 1e-4, 1e-2, 1.0]))
@operator_settings
def test_smoothed_map_spectrum_and_operator_norm(shape, seed, beta):
    m = sample_gaussian(*shape, seed)
    s = singular_values(m)
    out = orthogonalize_smoothed(m, beta)
    expected = s / np.sqrt(s ** 2 + beta)
    observed = np.linalg.svd(out, compute_uv=False)[:s.size]

    np.testing.assert_allclose(observed, expected, atol=THRESHOLDS.smoothed_map_tolerance)
    assert spectral_norm(out) <= 1.0 + 1e-12

def test_smoothed_map_approaches_exact_map():
    m = sample_gaussian(5, 4, 3)

    np.testing.assert_allclose(orthogonalize_smoothed(m, 1e-14), orthogonalize_exact(m), atol=1e-6)

def test_newton_schulz_on_identity():
    low, high = THRESHOLDS.ns_interval
    for scale in (1e-3, 1.0, 50.0):
        svals = np.linalg.svd(newton_schulz(scale * np.eye(3)), compute_uv=False)
        assert np.all((svals > low) & (svals < high))

@pytest.mark.slow
@given(rows=st.integers(min_value=1, max_value=MAX_DIM), cols=st.integers(min_value=1, max_value=MAX_DIM),
       condition=st.floats(min_value=1.0, max_value=100.0), seed=seeds)
@operator_settings
def test_newton_schulz_lands_in_interval_for_bounded_condition_number(rows, cols, condition, seed):
    k = min(rows, cols, 6)
    spectrum = condition ** (-np.linspace(0.0, 1.0, k)) if k > 1 else np.ones(1)
    u = sample_orthonormal(rows, k, (seed, 1))
    v = sample_orthonormal(cols, k, (seed, 2))
    m = (u * spectrum) @ v.T
    low, high = THRESHOLDS.ns_interval

    svals = np.linalg.svd(newton_schulz(m), compute_uv=False)[:k]

    assert np.all((svals > low) & (svals < high))

def test_newton_schulz_handles_tall_and_wide_inputs_alike():
    m = sample_gaussian(7, 3, 11)

    np.testing.assert_allclose(newton_schulz(m), newton_schulz(m.T).T, atol=1e-12)

def test_newton_schulz_rejects_zero_input():
    with pytest.raises(InvalidArgumentError):
        newton_schulz(np.zeros((2, 2)))

def test_sampling_is_deterministic_per_seed():
    np.testing.assert_array_equal(sample_gaussian(3, 4, (7, 1)), sample_gaussian(3, 4, (7, 1)))
    assert not np.array_equal(sample_gaussian(3, 4, (7, 1)), sample_gaussian(3, 4, (7, 2)))

@pytest.mark.slow
@given(rows=st.integers(min_value=1, max_value=MAX_DIM), seed=seeds, data=st.data())
@operator_settings
def test_sample_orthonormal_columns(rows, seed, data):
    cols = data.draw(st.integers(min_value=1, max_value=rows))
    q = sample_orthonormal(rows, cols, seed)

    np.testing.assert_allclose(q.T @ q, np.eye(cols), atol=1e-10)

def test_sample_orthonormal_rejects_too_many_columns():
    with pytest.raises(InvalidArgumentError):
        sample_orthonormal(2, 3, 0)
