import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmdenkf.filters import (
    Ensemble,
    FilterDivergence,
    FilterError,
    ParticleSet,
    StateSpaceSpec,
    effective_sample_size,
    enkf_init,
    enkf_step,
    ensemble_stats,
    pf_init,
    pf_step,
    sqrt_factor,
)
from oracles import kalman_filter


def linear(F):
    F = np.atleast_2d(F)
    return lambda X: X @ F.T


def simulate(F, Q, H, R, x0, steps, seed):
    rng = np.random.default_rng(seed)
    F, Q, H, R = (np.atleast_2d(a) for a in (F, Q, H, R))
    x = np.atleast_1d(x0).astype(float)
    ys = []
    for _ in range(steps):
        x = F @ x + rng.multivariate_normal(np.zeros(len(x)), Q)
        ys.append(H @ x + rng.multivariate_normal(np.zeros(H.shape[0]), R))
    return np.array(ys)


# --- init and stats -----------------------------------------------------------

def test_zero_covariance_gives_identical_members():
    ens = enkf_init([1.0, -2.0], np.zeros((2, 2)), 5, seed=0)
    np.testing.assert_array_equal(ens.members, np.tile([1.0, -2.0], (5, 1)))


def test_large_sample_variance():
    ens = enkf_init([0.0], [[4.0]], 100_000, seed=1)
    assert 3.8 <= ens.members.var(ddof=1) <= 4.2


def test_single_member_rejected():
    with pytest.raises(FilterError):
        enkf_init([0.0], [[1.0]], 1, seed=0)


def test_non_psd_names_eigenvalue():
    with pytest.raises(FilterError, match="eigenvalue -1"):
        enkf_init([0.0, 0.0], [[0.0, 1.0], [1.0, 0.0]], 10, seed=0)


def test_asymmetric_covariance_rejected():
    with pytest.raises(FilterError, match="symmetric"):
        sqrt_factor([[1.0, 0.5], [0.0, 1.0]])


def test_stats_two_members():
    mean, cov = ensemble_stats(Ensemble(np.array([[0.0], [2.0]])))
    np.testing.assert_allclose(mean, [1.0])
    np.testing.assert_allclose(cov, [[2.0]])


def test_stats_identical_members():
    _, cov = ensemble_stats(Ensemble(np.ones((4, 3))))
    np.testing.assert_array_equal(cov, np.zeros((3, 3)))


def test_stats_standard_normal():
    _, cov = ensemble_stats(Ensemble(np.random.default_rng(2).standard_normal((100_000, 1))))
    assert 0.97 <= cov[0, 0] <= 1.03


def test_diagonal_covariance_matches_full():
    a = enkf_init([0.0, 0.0], np.array([1.0, 4.0]), 20, seed=3)
    b = enkf_init([0.0, 0.0], np.diag([1.0, 4.0]), 20, seed=3)
    np.testing.assert_allclose(a.members, b.members)


# --- EnKF --------------------------------------------------------------------------

def test_trusted_measurement_pulls_to_observation():
    spec = StateSpaceSpec(linear(np.eye(2)), np.eye(2), 0.5 * np.eye(2), 1e-12 * np.eye(2))
    ens = enkf_init([0.0, 0.0], np.eye(2), 200, seed=4)
    y = np.array([3.0, -1.0])
    out = enkf_step(ens, spec, y, seed=5)
    np.testing.assert_allclose(out.mean(), y, rtol=1e-4)


def test_zero_observation_operator_leaves_forecast():
    spec = StateSpaceSpec(linear(2.0 * np.eye(1)), np.zeros((1, 1)), [[0.0]], [[1.0]])
    ens = enkf_init([1.0], [[1.0]], 30, seed=6)
    out = enkf_step(ens, spec, [100.0], seed=7)
    np.testing.assert_allclose(out.members, 2.0 * ens.members)


def test_singular_innovation_covariance_raises():
    spec = StateSpaceSpec(linear(np.eye(1)), np.eye(1), [[0.0]], [[0.0]])
    ens = Ensemble(np.ones((5, 1)))
    with pytest.raises(FilterError, match="singular"):
        enkf_step(ens, spec, [1.0], seed=0)


def test_observation_shape_checked():
    spec = StateSpaceSpec(linear(np.eye(2)), np.eye(2), np.eye(2), np.eye(2))
    with pytest.raises(FilterError):
        enkf_step(enkf_init([0, 0], np.eye(2), 5, seed=0), spec, [1.0, 2.0, 3.0], seed=0)


def test_enkf_bit_reproducible():
    spec = StateSpaceSpec(linear([[0.9]]), [[1.0]], [[0.1]], [[0.2]])
    ens = enkf_init([0.0], [[1.0]], 50, seed=8)
    a = enkf_step(ens, spec, [0.3], seed=[1, 2])
    b = enkf_step(ens, spec, [0.3], seed=[1, 2])
    np.testing.assert_array_equal(a.members, b.members)


def test_enkf_scalar_matches_kalman_over_50_steps():
    F, Q, H, R = [[0.95]], [[2.0]], [[1.0]], [[0.5]]
    ys = simulate(F, Q, H, R, [0.0], 50, seed=9)
    means, covs = kalman_filter([0.0], [[1.0]], F, Q, H, R, ys)
    N = 10_000
    spec = StateSpaceSpec(linear(F), H, Q, R)
    ens = enkf_init([0.0], [[1.0]], N, seed=10)
    for k, y in enumerate(ys):
        ens = enkf_step(ens, spec, y, seed=[11, k])
        se = np.sqrt(covs[k, 0, 0] / N)
        assert abs(ens.mean()[0] - means[k, 0]) <= 3 * se
        # sample variance has relative standard error about sqrt(2/N)
        assert abs(ensemble_stats(ens)[1][0, 0] / covs[k, 0, 0] - 1) <= 3 * np.sqrt(2 / N) + 0.02


def test_gain_midpoint_when_R_equals_P():
    # forecast spread P = 1 (no process noise, identity map); R = P -> midpoint
    N = 200_000
    spec = StateSpaceSpec(linear(np.eye(1)), np.eye(1), [[0.0]], [[1.0]])
    ens = enkf_init([0.0], [[1.0]], N, seed=12)
    out = enkf_step(ens, spec, [2.0], seed=13)
    assert out.mean()[0] == pytest.approx(1.0, abs=4 / np.sqrt(N))


# --- particle filter ------------------------------------------------------------

def test_huge_R_keeps_equal_weights():
    spec = StateSpaceSpec(linear(np.eye(1)), np.eye(1), [[0.1]], [[1e12]])
    ps = pf_init([0.0], [[1.0]], 100, seed=0)
    out = pf_step(ps, spec, [1.0], seed=1)
    np.testing.assert_allclose(out.weights, 1 / 100, rtol=1e-9)
    assert out.ess() == pytest.approx(100)


def test_delta_likelihood_resamples_to_one_particle():
    particles = np.array([[0.0], [5.0], [-3.0], [9.0]])
    spec = StateSpaceSpec(linear(np.eye(1)), np.eye(1), [[0.0]], [[1e-8]])
    out = pf_step(ParticleSet(particles, np.ones(4)), spec, [5.0], seed=2)
    np.testing.assert_array_equal(out.particles, np.full((4, 1), 5.0))
    np.testing.assert_allclose(out.weights, 0.25)


def test_divergence_reports_mahalanobis():
    particles = np.zeros((3, 1))
    spec = StateSpaceSpec(linear(np.eye(1)), np.eye(1), [[0.0]], [[1e-300]])
    with pytest.raises(FilterDivergence, match="filter divergence.*Mahalanobis"):
        pf_step(ParticleSet(particles, np.ones(3)), spec, [1e10], seed=0)


def test_pf_scalar_matches_kalman_over_100_steps():
    # resampling inflates the spread beyond sqrt(P/N), so the standard
    # error is measured from independent replicate filters
    F, Q, H, R = [[0.9]], [[1.0]], [[1.0]], [[1.0]]
    ys = simulate(F, Q, H, R, [0.0], 100, seed=14)
    means, _ = kalman_filter([0.0], [[1.0]], F, Q, H, R, ys)
    N, reps = 10_000, 10
    spec = StateSpaceSpec(linear(F), H, Q, R)
    runs = np.empty((reps, len(ys)))
    for r in range(reps):
        ps = pf_init([0.0], [[1.0]], N, seed=[15, r])
        for k, y in enumerate(ys):
            ps = pf_step(ps, spec, y, seed=[16, r, k])
            runs[r, k] = ps.mean()[0]
    se = runs.std(axis=0, ddof=1)
    assert np.all(np.abs(runs[0] - means[:, 0]) <= 3 * se)


@given(seed=st.integers(0, 2**32 - 1), obs=st.floats(-50, 50), rvar=st.floats(1e-3, 1e3))
def test_pf_weights_normalized_and_ess_bounded(seed, obs, rvar):
    spec = StateSpaceSpec(linear([[1.1]]), [[1.0]], [[0.5]], [[rvar]])
    ps = pf_init([0.0], [[4.0]], 64, seed=seed)
    try:
        out = pf_step(ps, spec, [obs], seed=seed + 1)
    except FilterDivergence:
        return
    assert np.all(out.weights >= 0)
    assert abs(out.weights.sum() - 1) <= 1e-12
    assert 1 - 1e-9 <= out.ess() <= 64 + 1e-9


@given(w=st.lists(st.floats(0, 1), min_size=1, max_size=30).filter(lambda v: sum(v) > 1e-6))
def test_ess_range(w):
    w = np.array(w) / np.sum(w)
    assert 1 - 1e-9 <= effective_sample_size(w) <= len(w) + 1e-9
