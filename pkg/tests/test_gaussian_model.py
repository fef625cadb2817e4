import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffinfo.gaussian_model import (
    GaussianDist,
    IllConditionedSpec,
    JointGaussianSpec,
    analytic_mi,
    build_joint_spec,
    conditional_x_given_y,
    gaussian_kl,
    joint_covariance,
    marginal_x,
    mi_1d,
    sample_pairs,
    spec_from_matrices,
    total_correlation_gaussian,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 6)


def one_d(a=1.0, var_x=1.0, noise=1.0):
    return spec_from_matrices([[a]], [[var_x]], noise)


# -- construction -------------------------------------------------------------

def test_one_d_reduction():
    spec = one_d()
    assert spec.dim_x == spec.dim_y == 1
    np.testing.assert_array_equal(joint_covariance(spec), [[1.0, 1.0], [1.0, 2.0]])


def test_desk_scale_joint_covariance_is_pd():
    spec = build_joint_spec(25, 15, 1.0, 1e-6, seed=7)
    cov = joint_covariance(spec)
    assert cov.shape == (40, 40)
    assert np.linalg.eigvalsh(cov).min() > 0


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_build_is_deterministic(seed):
    a = build_joint_spec(4, 3, 0.5, seed=seed)
    b = build_joint_spec(4, 3, 0.5, seed=seed)
    np.testing.assert_array_equal(a.mixing, b.mixing)
    np.testing.assert_array_equal(a.cov_x, b.cov_x)
    assert a == b


def test_mixing_independent_of_noise_level():
    a = build_joint_spec(5, 3, 1.0, seed=3)
    b = build_joint_spec(5, 3, 0.25, seed=3)
    np.testing.assert_array_equal(a.mixing, b.mixing)
    np.testing.assert_array_equal(a.cov_x, b.cov_x)


@given(dims, dims, seeds, st.floats(1e-6, 1e-2))
@settings(max_examples=30, deadline=None)
def test_cov_x_eigenvalues_at_least_jitter(dx, dy, seed, jitter):
    spec = build_joint_spec(dx, dy, 1.0, jitter, seed)
    assert np.linalg.eigvalsh(spec.cov_x).min() >= jitter * (1 - 1e-6)


@pytest.mark.parametrize("kwargs", [dict(dim_x=0, dim_y=1, noise_std=1.0),
                                    dict(dim_x=1, dim_y=1, noise_std=0.0),
                                    dict(dim_x=1, dim_y=1, noise_std=1.0, jitter=0.0)])
def test_build_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        build_joint_spec(**kwargs)


def test_block_covariance_examples():
    spec = spec_from_matrices(np.eye(2), np.eye(2), 1.0)
    cov = joint_covariance(spec)
    np.testing.assert_allclose(cov[:2, 2:], np.eye(2))
    np.testing.assert_allclose(cov[2:, 2:], 2 * np.eye(2))
    zero = spec_from_matrices(np.zeros((2, 3)), np.diag([1.0, 2.0, 3.0]), 0.5)
    cov = joint_covariance(zero)
    np.testing.assert_array_equal(cov[:3, 3:], 0.0)
    np.testing.assert_allclose(cov[3:, 3:], 0.25 * np.eye(2))


def test_serialization_round_trip(tmp_path):
    spec = build_joint_spec(4, 2, 0.6, seed=11)
    path = tmp_path / "spec.json"
    spec.save(path)
    assert JointGaussianSpec.load(path) == spec
    implicit = JointGaussianSpec.from_dict(json.loads(json.dumps(spec.to_dict(explicit=False))))
    assert implicit == spec


# -- conditionals and MI ------------------------------------------------------

def test_conditional_one_d_examples():
    d = conditional_x_given_y(one_d(), np.array([0.0]))
    np.testing.assert_allclose(d.mean, [0.0])
    np.testing.assert_allclose(d.cov, [[0.5]])
    d = conditional_x_given_y(one_d(a=2.0), np.array([1.0]))
    np.testing.assert_allclose(d.mean, [0.4])
    np.testing.assert_allclose(d.cov, [[0.2]])


def test_conditional_with_zero_mixing_is_marginal():
    spec = spec_from_matrices(np.zeros((2, 3)), np.diag([1.0, 2.0, 3.0]), 1.0)
    d = conditional_x_given_y(spec, np.array([5.0, -2.0]))
    m = marginal_x(spec)
    np.testing.assert_allclose(d.mean, 0.0)
    np.testing.assert_allclose(d.cov, m.cov)


@given(dims, dims, seeds, st.floats(0.1, 3.0))
@settings(max_examples=30, deadline=None)
def test_conditional_cov_below_marginal(dx, dy, seed, noise):
    spec = build_joint_spec(dx, dy, noise, seed=seed)
    gap = spec.cov_x - spec.conditional_cov()
    assert np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() > -1e-10


def test_mi_examples():
    assert analytic_mi(one_d()) == pytest.approx(0.5 * np.log(2), rel=1e-12)
    assert analytic_mi(spec_from_matrices(np.zeros((2, 2)), np.eye(2), 1.0)) == 0.0
    assert analytic_mi(spec_from_matrices(np.eye(2), np.eye(2), 1.0)) == pytest.approx(np.log(2), rel=1e-12)
    assert mi_1d(1, 1, 1) == pytest.approx(0.5 * np.log(2))
    assert mi_1d(0, 1, 1) == 0.0
    assert mi_1d(2, 1, 1) == pytest.approx(0.804719, abs=1e-6)


@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(0.1, 5))
@settings(max_examples=50, deadline=None)
def test_mi_1d_matches_analytic(a, sx, se):
    spec = spec_from_matrices([[a]], [[sx**2]], se)
    assert analytic_mi(spec) == pytest.approx(mi_1d(a, sx, se), rel=1e-12, abs=1e-15)


@given(dims, dims, seeds)
@settings(max_examples=20, deadline=None)
def test_mi_decreases_with_noise(dx, dy, seed):
    mis = [analytic_mi(build_joint_spec(dx, dy, s, seed=seed)) for s in (0.25, 0.6, 1.0, 2.0)]
    assert all(a > b for a, b in zip(mis, mis[1:]))


# -- sampling -----------------------------------------------------------------

def test_sample_covariance_one_d():
    x, y = sample_pairs(one_d(), 100_000, 5)
    c = np.mean((x - x.mean()) * (y - y.mean()))
    # Var of the product estimator for jointly Gaussian (X, Y): var_x var_y + cov^2 = 3
    assert abs(c - 1.0) < 3 * np.sqrt(3.0 / 100_000)


def test_sample_independence_when_mixing_zero():
    x, y = sample_pairs(spec_from_matrices([[0.0]], [[1.0]], 1.0), 100_000, 1)
    assert abs(np.corrcoef(x[:, 0], y[:, 0])[0, 1]) < 0.02


def test_sampling_is_deterministic():
    spec = build_joint_spec(3, 2, 1.0, seed=1)
    a = sample_pairs(spec, 50, 9)
    b = sample_pairs(spec, 50, 9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


# -- KL and total correlation -------------------------------------------------

def test_kl_examples():
    p = GaussianDist(np.zeros(1), np.eye(1))
    assert gaussian_kl(p, p) == 0.0
    assert gaussian_kl(p, GaussianDist(np.zeros(1), np.e * np.eye(1))) == pytest.approx(1 / (2 * np.e))
    assert gaussian_kl(GaussianDist(np.ones(1), np.eye(1)), p) == pytest.approx(0.5)


def test_kl_rejects_singular_reference():
    p = GaussianDist(np.zeros(2), np.eye(2))
    with pytest.raises(IllConditionedSpec):
        gaussian_kl(p, GaussianDist(np.zeros(2), np.diag([1.0, 0.0])))


def test_total_correlation_examples():
    assert total_correlation_gaussian(np.eye(3)) == 0.0
    rho = 0.5
    assert total_correlation_gaussian([[1, rho], [rho, 1]]) == pytest.approx(0.143841, abs=1e-6)
    assert total_correlation_gaussian([[1, 1], [1, 1]]) == float("inf")


@given(dims, seeds)
@settings(max_examples=30, deadline=None)
def test_kl_decomposes_into_marginals_plus_tc(d, seed):
    cov = build_joint_spec(d, 1, 1.0, seed=seed).cov_x
    joint = gaussian_kl(GaussianDist(np.zeros(d), cov), GaussianDist(np.zeros(d), np.eye(d)))
    var = np.diag(cov)
    marginals = np.sum(0.5 * (var - 1 - np.log(var)))
    assert joint == pytest.approx(marginals + total_correlation_gaussian(cov), rel=1e-10, abs=1e-12)


def test_entropy_and_logpdf_consistency():
    d = GaussianDist(np.array([1.0, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    rng = np.random.default_rng(0)
    x = d.sample(200_000, rng)
    assert -np.mean(d.logpdf(x)) == pytest.approx(d.entropy(), rel=5e-3)
