import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmdenkf.baselines import (
    HistoricalBaseline,
    KdeForecast,
    WindowedTdmdState,
    kde_predict,
    online_dmd_init,
    online_dmd_step,
    silverman_bandwidth,
    streaming_tdmd_step,
    windowed_tdmd_step,
)
from dmdenkf.dmd import SvdTruncation, build_snapshots, fit_exact_dmd, fit_tdmd
from dmdenkf.evaluation import modulus_argument_errors
from dmdenkf.experiments import RotationStudyConfig, rotation_trial
from dmdenkf.synthetic import RotationSeriesSpec, gen_rotation
from oracles import kde_mass, lstsq_operator, rotation_matrix

R2 = SvdTruncation.fixed_rank(2)


def fixed_rotation(sigma, seed, steps=500, theta=np.pi / 8):
    spec = RotationSeriesSpec(steps=steps, theta_start=theta, theta_end=theta, sigma=sigma, seed=seed)
    return gen_rotation(spec)[1]


# --- streaming proxy ------------------------------------------------------------

def test_streaming_first_step_is_spin_up_fit():
    y = fixed_rotation(0.05, 0)
    a = streaming_tdmd_step(y[:100], R2)
    b = fit_tdmd(build_snapshots(y[:100], 1), R2)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)


def test_streaming_error_shrinks_with_data():
    lengths = (25, 50, 100, 200, 400)
    err = np.zeros(len(lengths))
    for seed in range(200):
        y = fixed_rotation(0.5, seed)
        for i, L in enumerate(lengths):
            lam = streaming_tdmd_step(y[:L], R2).eigenvalues
            err[i] += np.min(np.abs(lam - np.exp(1j * np.pi / 8)))
    assert np.all(np.diff(err) < 0)


def test_streaming_lags_drifting_argument():
    cfg = RotationStudyConfig(methods=("streaming",))
    _, args = modulus_argument_errors([rotation_trial(s, 0.05, cfg)["streaming"] for s in range(3)])
    assert np.mean(args) < 0


# --- windowed -------------------------------------------------------------------

def test_window_warming_up():
    state = WindowedTdmdState(w=10, trunc=R2)
    state, fit = windowed_tdmd_step(state, [1.0, 0.0])
    assert fit is None and not state.ready


def test_window_exact_on_noiseless_rotation():
    y = fixed_rotation(0.0, 0, steps=40)
    state = WindowedTdmdState(w=10, trunc=R2)
    for t, x in enumerate(y):
        state, fit = windowed_tdmd_step(state, x)
        if t >= 3:
            lam = np.sort_complex(fit.eigenvalues)
            np.testing.assert_allclose(lam, np.exp([-1j * np.pi / 8, 1j * np.pi / 8]), atol=1e-10)
        assert len(state.buffer) <= 10


def test_full_window_equals_streaming():
    y = fixed_rotation(0.5, 1, steps=60)
    state = WindowedTdmdState(w=1000, trunc=R2)
    for t, x in enumerate(y):
        state, fit = windowed_tdmd_step(state, x)
        if t >= 2:
            np.testing.assert_array_equal(fit.eigenvalues, streaming_tdmd_step(y[:t + 1], R2).eigenvalues)


def test_window_rejects_tiny_width():
    with pytest.raises(ValueError):
        WindowedTdmdState(w=1)


# --- online DMD ---------------------------------------------------------------

def test_online_rho_one_matches_batch_least_squares():
    rng = np.random.default_rng(0)
    A = 0.97 * rotation_matrix(0.3)
    A3 = np.eye(3) * 0.9
    A3[:2, :2] = A
    A3[2, 0] = 0.05
    x = [rng.standard_normal(3)]
    for _ in range(110):
        x.append(A3 @ x[-1])
    x = np.array(x)
    state = online_dmd_init(x[:10], rho=1.0)
    for k in range(10, 110):
        state, lam = online_dmd_step(state, x[k - 1], x[k])
        oracle = lstsq_operator(x[:k].T, x[1:k + 1].T)
        np.testing.assert_allclose(state.A, oracle, atol=1e-6)
        ref = np.sort_complex(fit_exact_dmd(build_snapshots(x[:k + 1], 1)).eigenvalues)
        np.testing.assert_allclose(np.sort_complex(lam), ref, atol=1e-6)
    assert np.abs(state.A - A3).max() <= 1e-6


def test_online_forgetting_weights():
    # three updates after a 3-snapshot init: a sample k steps old weighs rho**k
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 2))
    rho = 0.7
    state = online_dmd_init(x[:3], rho)
    for k in range(3, 6):
        state, _ = online_dmd_step(state, x[k - 1], x[k])
    X, Y = x[:-1].T, x[1:].T
    w = np.sqrt(rho ** np.arange(X.shape[1] - 1, -1, -1))
    np.testing.assert_allclose(state.A, lstsq_operator(X * w, Y * w), atol=1e-10)
    np.testing.assert_allclose(state.P, state.P.T, atol=1e-10)


def test_online_tighter_but_more_biased_than_windowed():
    cfg = RotationStudyConfig(methods=("windowed", "online"))
    runs = [rotation_trial(s, 0.05, cfg) for s in range(10)]
    _, win = modulus_argument_errors([r["windowed"] for r in runs])
    _, onl = modulus_argument_errors([r["online"] for r in runs])
    assert np.std(onl) < np.std(win)
    assert abs(np.mean(onl)) > abs(np.mean(win))


def test_online_rejects_bad_rho():
    with pytest.raises(ValueError):
        online_dmd_init(np.ones((5, 1)), rho=0.0)


# --- KDE baseline ---------------------------------------------------------------

def test_single_sample_kde():
    hb = HistoricalBaseline({5: np.array([1.7])})
    kde, med = kde_predict(hb, 5)
    assert med == pytest.approx(1.7, abs=1e-9)
    assert kde.pdf(1.7) == pytest.approx(1 / (kde.bandwidth * np.sqrt(2 * np.pi)))


def test_symmetric_pair_median():
    _, med = kde_predict(HistoricalBaseline({1: np.array([0.5, 3.5])}), 1)
    assert med == pytest.approx(2.0, abs=1e-9)


def test_normal_history_median():
    values = np.random.default_rng(3).normal(2.0, 0.5, 10)
    _, med = kde_predict(HistoricalBaseline({10: values}), 10)
    assert 1.8 <= med <= 2.2


def test_missing_week_raises():
    with pytest.raises(ValueError):
        kde_predict(HistoricalBaseline({}), 3)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_kde_integrates_to_one(values):
    x = np.array(values)
    kde = KdeForecast(x, silverman_bandwidth(x))
    assert kde_mass(kde.centers, kde.bandwidth) == pytest.approx(1.0, abs=1e-6)
    lo, hi = x.min() - 0.3, x.max() + 0.3
    assert kde.prob_between(lo, hi) == pytest.approx(kde_mass(kde.centers, kde.bandwidth, lo, hi),
                                                     abs=1e-8)


def test_silverman_rule_and_fallbacks():
    x = np.random.default_rng(4).normal(0, 1, 50)
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.34
    expected = 0.9 * min(np.std(x, ddof=1), iqr) * 50 ** -0.2
    assert silverman_bandwidth(x) == pytest.approx(expected)
    # IQR is zero here, so the standard deviation is used
    y = np.array([1.0, 1.0, 1.0, 1.0, 5.0])
    assert silverman_bandwidth(y) == pytest.approx(0.9 * np.std(y, ddof=1) * 5 ** -0.2)
    assert silverman_bandwidth(np.ones(4)) == 1e-3


def test_history_excludes_pandemic_and_future_years():
    years = np.array([2007, 2008, 2009, 2010, 2011])
    weeks = np.full(5, 12)
    hb = HistoricalBaseline.from_history(years, weeks, [1.0, 2.0, 99.0, 3.0, 50.0], target_year=2011)
    np.testing.assert_array_equal(np.sort(hb.samples[12]), [1.0, 2.0, 3.0])


def test_week_53_borrows_week_52():
    hb = HistoricalBaseline.from_history([2010, 2011], [52, 52], [1.0, 2.0], target_year=2012)
    np.testing.assert_array_equal(hb.samples[53], hb.samples[52])
