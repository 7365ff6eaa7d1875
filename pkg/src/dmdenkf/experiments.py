"""Monte Carlo runners for the synthetic tracking and forecasting studies.

Every trial is a pure function of its arguments; run ``i`` of a study uses
seed ``seed_base + i`` so results do not depend on worker count or order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as dm
from .baselines import (
    WindowedTdmdState,
    online_dmd_init,
    online_dmd_step,
    streaming_tdmd_step,
    windowed_tdmd_step,
)
from .dmd import DmdError, SvdTruncation, fit_tdmd, build_snapshots
from .evaluation import EigTrackRecord, dominant_eigenvalue, relative_error
from .filters import FilterError, ParticleSet, pf_step
from .synthetic import (
    PandemicSeriesSpec,
    RotationSeriesSpec,
    gen_pandemic,
    gen_rotation,
    rotation_angles,
)

__all__ = [
    "METHODS",
    "RotationStudyConfig",
    "PandemicStudyConfig",
    "PfStudyConfig",
    "rotation_trial",
    "spin_up_pair_found",
    "pf_comparison_trial",
    "pandemic_trial",
    "run_trials",
]

METHODS = ("windowed", "online", "streaming", "dmdenkf", "hankel")
METHOD_LABELS = {
    "windowed": "Windowed TDMD",
    "online": "Online DMD",
    "streaming": "Streaming TDMD",
    "dmdenkf": "DMDEnKF",
    "hankel": "Hankel-DMDEnKF",
}


@dataclass(frozen=True)
class RotationStudyConfig:
    """Settings shared by the rotation tracking and ensemble-size studies.

    ``alpha1``/``alpha2`` are absolute process variances of the filter's
    state and temporal-mode parameters, tuned on this system.
    """

    steps: int = 500
    spin_up: int = 100
    window: int = 10
    rho: float = 0.9
    delay: int = 50
    rank: int = 2
    ensemble_size: int = 50
    alpha1: float = 1e-3
    alpha2: float = 5e-5
    methods: tuple = METHODS


@dataclass(frozen=True)
class PfStudyConfig:
    rotation: RotationStudyConfig = field(default_factory=RotationStudyConfig)
    ensemble_sizes: tuple = (5, 10, 20, 40, 50)
    particles: int = 10_000
    delay: int = 1


@dataclass(frozen=True)
class PandemicStudyConfig:
    """Settings of the growth/decay forecasting study.

    The eigenvalue drifts by only 2e-5 per step here, and 50-step forecasts
    amplify parameter jitter fifty-fold, hence the much smaller ``alpha2``.
    ``drop_smallest`` singular values are discarded by every method except
    Online DMD; 0 keeps the full rank.
    """

    steps: int = 1000
    spin_up: int = 100
    horizon: int = 50
    window: int = 10
    rho: float = 0.9
    delay: int = 50
    ensemble_size: int = 50
    alpha1: float = 1e-4
    alpha2: float = 1e-8
    gamma_start: float = 1.01
    gamma_end: float = 0.99
    drop_smallest: int = 1
    methods: tuple = METHODS


def _filter_config(cfg, sigma: float, delay: int, seed: int, trunc: SvdTruncation,
                   ensemble_size: int | None = None) -> dm.DmdEnkfConfig:
    return dm.DmdEnkfConfig(
        spin_up_length=cfg.spin_up,
        truncation=trunc,
        delay=delay,
        alpha1=cfg.alpha1,
        alpha2=cfg.alpha2,
        meas_var=max(sigma**2, 1e-12),
        ensemble_size=ensemble_size or cfg.ensemble_size,
        seed=seed,
    )


def spin_up_pair_found(seed: int, sigma: float, delay: int = 1,
                       cfg: RotationStudyConfig = RotationStudyConfig()) -> bool:
    """Whether the spin-up TDMD on a rotation run yields a conjugate pair."""
    _, y = gen_rotation(RotationSeriesSpec(steps=cfg.steps, sigma=sigma, seed=seed))
    pair = build_snapshots(y[:cfg.spin_up], delay)
    return fit_tdmd(pair, SvdTruncation.fixed_rank(cfg.rank)).has_complex_pair


def rotation_trial(seed: int, sigma: float,
                   cfg: RotationStudyConfig = RotationStudyConfig()) -> dict:
    """Track the rotation system's eigenvalues with every requested method.

    Returns a dict mapping method name to an :class:`EigTrackRecord` over the
    steps after spin-up, plus ``"spin_up_pair"`` flags for the filters.
    """
    spec = RotationSeriesSpec(steps=cfg.steps, sigma=sigma, seed=seed)
    _, y = gen_rotation(spec)
    theta = rotation_angles(spec)
    m = cfg.spin_up
    steps = range(m, cfg.steps)
    true_mod = np.ones(len(steps))
    true_arg = theta[m:cfg.steps]
    trunc = SvdTruncation.fixed_rank(cfg.rank)
    out = {}
    pair_flags = {}
    for method in cfg.methods:
        spectra = []
        if method == "streaming":
            for t in steps:
                spectra.append(streaming_tdmd_step(y[:t + 1], trunc).eigenvalues)
        elif method == "windowed":
            state = WindowedTdmdState(w=cfg.window, trunc=trunc)
            for x in y[m - cfg.window + 1:m]:
                state, _ = windowed_tdmd_step(state, x)
            for t in steps:
                state, fit = windowed_tdmd_step(state, y[t])
                spectra.append(fit.eigenvalues)
        elif method == "online":
            state = online_dmd_init(y[:m], cfg.rho)
            for t in steps:
                state, lam = online_dmd_step(state, y[t - 1], y[t])
                spectra.append(lam)
        elif method in ("dmdenkf", "hankel"):
            delay = 1 if method == "dmdenkf" else cfg.delay
            model = dm.spin_up(y, _filter_config(cfg, sigma, delay, seed, trunc))
            pair_flags[method] = model.dmd.has_complex_pair
            for t in steps:
                model = dm.assimilate(model, y[t])
            spectra = [h.eigenvalues for h in model.history]
        else:
            raise ValueError(f"unknown method {method!r}")
        out[method] = EigTrackRecord.from_spectra(spectra, true_mod, true_arg)
    out["spin_up_pair"] = pair_flags
    return out


def pf_comparison_trial(seed: int, cfg: PfStudyConfig = PfStudyConfig(), sigma: float = 0.5) -> dict:
    """Argument errors of the DMD particle filter and of the EnKF at each size.

    Returns ``{"pair": bool, "pf": errors, N: errors, ...}`` with signed
    argument errors per filtering step (wrapped to ``(-pi, pi]``).
    """
    rc = cfg.rotation
    spec = RotationSeriesSpec(steps=rc.steps, sigma=sigma, seed=seed)
    _, y = gen_rotation(spec)
    theta = rotation_angles(spec)[rc.spin_up:rc.steps]
    trunc = SvdTruncation.fixed_rank(rc.rank)
    base = _filter_config(rc, sigma, cfg.delay, seed, trunc)
    out = {}

    def arg_errors(spectra):
        est = np.array([dominant_eigenvalue(lam)[1] for lam in spectra])
        return np.pi - np.mod(np.pi - (est - theta), 2 * np.pi)

    for N in cfg.ensemble_sizes:
        model = dm.spin_up(y, replace(base, ensemble_size=N))
        for t in range(rc.spin_up, rc.steps):
            model = dm.assimilate(model, y[t])
        out[N] = arg_errors([h.eigenvalues for h in model.history])

    fit = dm.fit_spin_up(y, base)
    out["pair"] = fit.dmd.has_complex_pair
    template = dm.spin_up(y, replace(base, ensemble_size=2))
    spec_ss = dm.state_space(template)
    rng = np.random.default_rng([seed, 7])
    g = rng.standard_normal((cfg.particles, fit.prior_factor.shape[1]))
    ps = ParticleSet(fit.z0 + g @ fit.prior_factor.T, np.full(cfg.particles, 1.0 / cfg.particles))
    n_eff = fit.dmd.n_eff
    spectra = []
    for t in range(rc.spin_up, rc.steps):
        ps = pf_step(ps, spec_ss, y[t], seed=[seed, 8, t])
        spectra.append(dm.decode_many(ps.mean()[n_eff:], fit.encoding)[0])
    out["pf"] = arg_errors(spectra)
    return out


def pandemic_trial(seed: int, sigma: float,
                   cfg: PandemicStudyConfig = PandemicStudyConfig()) -> dict:
    """Mean relative error of ``horizon``-step forecasts for each method.

    Forecasts are issued after each measurement ``y_k`` for
    ``k = spin_up .. steps - horizon`` and scored against the true state.
    A method that fails numerically scores ``inf``.
    """
    spec = PandemicSeriesSpec(steps=cfg.steps, gamma_start=cfg.gamma_start, gamma_end=cfg.gamma_end,
                              seed_A=seed, seed_noise=seed, sigma=sigma)
    truth, y, gamma = gen_pandemic(spec)
    m, h = cfg.spin_up, cfg.horizon
    issue = range(m - 1, cfg.steps - h)
    k = cfg.drop_smallest
    trunc = SvdTruncation.drop_smallest(k) if k > 0 else SvdTruncation.full()
    out = {}

    def score(preds):
        errs = [relative_error(p, truth[t + h]) for t, p in zip(issue, preds)]
        return float(np.mean(errs))

    def power(A, x):
        return np.linalg.matrix_power(A, h) @ x

    for method in cfg.methods:
        try:
            preds = []
            if method == "streaming":
                for t in issue:
                    preds.append(power(streaming_tdmd_step(y[:t + 1], trunc).operator(), y[t]))
            elif method == "windowed":
                state = WindowedTdmdState(w=cfg.window, trunc=trunc)
                for x in y[m - cfg.window:m - 1]:
                    state, _ = windowed_tdmd_step(state, x)
                for t in issue:
                    state, fit = windowed_tdmd_step(state, y[t])
                    preds.append(power(fit.operator(), y[t]))
            elif method == "online":
                state = online_dmd_init(y[:m], cfg.rho)
                for t in issue:
                    if t >= m:
                        state, _ = online_dmd_step(state, y[t - 1], y[t])
                    preds.append(power(state.A, y[t]))
            elif method in ("dmdenkf", "hankel"):
                delay = 1 if method == "dmdenkf" else cfg.delay
                # same rank as the unembedded fit, also under delay embedding
                ftrunc = trunc if delay == 1 else SvdTruncation.fixed_rank(spec.dim - k)
                model = dm.spin_up(y, _filter_config(cfg, sigma, delay, seed, ftrunc))
                for t in issue:
                    if t >= m:
                        model = dm.assimilate(model, y[t])
                    preds.append(dm.forecast_members(model, h).mean(axis=0))
            else:
                raise ValueError(f"unknown method {method!r}")
            out[method] = score(preds)
        except (DmdError, FilterError, dm.DecodeError, np.linalg.LinAlgError):
            out[method] = math.inf
    return out


def _call(args):
    fn, seed, kwargs = args
    return fn(seed, **kwargs)


def run_trials(fn, seeds, workers: int = 1, **kwargs) -> list:
    """Run ``fn(seed, **kwargs)`` for every seed, in seed order."""
    jobs = [(fn, int(s), kwargs) for s in seeds]
    if workers <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
