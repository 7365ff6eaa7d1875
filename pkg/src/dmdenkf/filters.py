"""Perturbed-observation ensemble Kalman filter and bootstrap particle filter.

Both filters work on a :class:`StateSpaceSpec` whose ``propagate`` map is
applied to a whole member matrix at once (one member per row), which keeps
per-member nonlinear models vectorized.  Covariances may be given as full
matrices or as 1-D arrays holding a diagonal.

Every stochastic operation takes an explicit ``seed`` (anything accepted by
:func:`numpy.random.default_rng`), so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la

__all__ = [
    "FilterError",
    "FilterDivergence",
    "StateSpaceSpec",
    "Ensemble",
    "ParticleSet",
    "sqrt_factor",
    "enkf_init",
    "ensemble_from_factor",
    "enkf_forecast",
    "enkf_analysis",
    "enkf_step",
    "ensemble_stats",
    "pf_init",
    "pf_step",
    "effective_sample_size",
    "multinomial_resample",
]

PSD_TOL = 1e-10
SYM_TOL = 1e-12


class FilterError(ValueError):
    pass


class FilterDivergence(FilterError):
    pass


def _check_cov(cov, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        if np.any(cov < -PSD_TOL):
            raise FilterError(f"{name} has negative variance {cov.min():.3e}")
        return cov
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise FilterError(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * scale:
        raise FilterError(f"{name} is not symmetric")
    return cov


@dataclass(frozen=True)
class StateSpaceSpec:
    """Model ``x_k = F(x_{k-1}) + w_k``, ``y_k = H x_k + v_k``.

    Attributes
    ----------
    propagate : callable
        Maps an ``(N, dim)`` member matrix to its deterministic forecast.
    obs_matrix : (l, dim) ndarray
    process_cov : (dim, dim) or (dim,) ndarray
        ``Q``; a 1-D array is read as a diagonal.
    meas_cov : (l, l) or (l,) ndarray
        ``R``; a 1-D array is read as a diagonal.
    """

    propagate: Callable[[np.ndarray], np.ndarray]
    obs_matrix: np.ndarray
    process_cov: np.ndarray
    meas_cov: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.obs_matrix, dtype=float))
        object.__setattr__(self, "obs_matrix", H)
        Q = _check_cov(self.process_cov, "process_cov")
        R = _check_cov(self.meas_cov, "meas_cov")
        object.__setattr__(self, "process_cov", Q)
        object.__setattr__(self, "meas_cov", R)
        if Q.shape[0] != H.shape[1]:
            raise FilterError("process_cov does not match the state dimension")
        if R.shape[0] != H.shape[0]:
            raise FilterError("meas_cov does not match the observation dimension")

    @property
    def dim(self) -> int:
        return self.obs_matrix.shape[1]


@dataclass(frozen=True)
class Ensemble:
    members: np.ndarray
    rng_seed: object = None

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2:
            raise FilterError("members must be an (N, dim) array")
        if m.shape[0] < 2:
            raise FilterError(f"ensemble needs at least 2 members, got {m.shape[0]}")
        object.__setattr__(self, "members", m)

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if p.ndim != 2 or w.shape != (p.shape[0],):
            raise FilterError("need (N, dim) particles and N weights")
        if np.any(w < 0):
            raise FilterError("weights must be non-negative")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise FilterError("weights must have a positive finite sum")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w / total)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def ess(self) -> float:
        return effective_sample_size(self.weights)


def sqrt_factor(cov) -> np.ndarray:
    """Return ``F`` with ``F @ F.T == cov`` for a symmetric PSD ``cov``.

    Raises
    ------
    FilterError
        Naming the most negative eigenvalue if ``cov`` is not PSD.
    """
    cov = _check_cov(cov, "covariance")
    if cov.ndim == 1:
        return np.diag(np.sqrt(np.clip(cov, 0, None)))
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if vals.size and vals.min() < -PSD_TOL * scale:
        raise FilterError(
            f"covariance is not positive semi-definite: eigenvalue {vals.min():.6e}"
        )
    return vecs * np.sqrt(np.clip(vals, 0, None))


def _gaussian_noise(rng, cov, size: int) -> np.ndarray:
    cov = np.asarray(cov)
    if cov.ndim == 1:
        return rng.standard_normal((size, cov.size)) * np.sqrt(np.clip(cov, 0, None))
    F = sqrt_factor(cov)
    return rng.standard_normal((size, F.shape[1])) @ F.T


def ensemble_from_factor(mean, factor, N: int, seed=None) -> Ensemble:
    """Draw ``N`` members from ``N(mean, factor @ factor.T)``."""
    if N < 2:
        raise FilterError(f"ensemble needs at least 2 members, got {N}")
    mean = np.asarray(mean, dtype=float)
    factor = np.asarray(factor, dtype=float)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((N, factor.shape[1]))
    return Ensemble(mean + g @ factor.T, rng_seed=seed)


def enkf_init(mean, cov, N: int, seed=None) -> Ensemble:
    """Draw ``N`` independent members from ``N(mean, cov)``."""
    if N < 2:
        raise FilterError(f"ensemble needs at least 2 members, got {N}")
    cov = np.asarray(cov, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if cov.ndim == 1:
        cov = _check_cov(cov, "covariance")
        factor = np.diag(np.sqrt(np.clip(cov, 0, None)))
    else:
        factor = sqrt_factor(cov)
    return ensemble_from_factor(mean, factor, N, seed)


def ensemble_stats(ens: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Member mean and unbiased (divisor ``N - 1``) sample covariance."""
    X = ens.members
    mean = X.mean(axis=0)
    A = X - mean
    return mean, A.T @ A / (X.shape[0] - 1)


def enkf_forecast(ens: Ensemble, spec: StateSpaceSpec, rng) -> np.ndarray:
    """Propagate every member and add process noise; returns the member matrix."""
    X = np.asarray(spec.propagate(ens.members), dtype=float)
    if X.shape != ens.members.shape:
        raise FilterError("propagate changed the member matrix shape")
    return X + _gaussian_noise(rng, spec.process_cov, X.shape[0])


def enkf_analysis(forecast: np.ndarray, spec: StateSpaceSpec, y, rng) -> np.ndarray:
    """Perturbed-observation update of a forecast member matrix.

    The gain ``P H^T (H P H^T + R)^{-1}`` uses the ensemble sample covariance
    and is applied through a Cholesky solve, never an explicit inverse.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    H, R = spec.obs_matrix, spec.meas_cov
    if y.shape != (H.shape[0],):
        raise FilterError(f"observation has shape {y.shape}, expected ({H.shape[0]},)")
    N = forecast.shape[0]
    A = forecast - forecast.mean(axis=0)
    HX = forecast @ H.T
    HA = A @ H.T
    PHt = A.T @ HA / (N - 1)
    S = HA.T @ HA / (N - 1) + (np.diag(R) if R.ndim == 1 else R)
    try:
        cho = la.cho_factor(S, lower=True)
    except la.LinAlgError as exc:
        raise FilterError("innovation covariance is singular; R must regularize it") from exc
    innovations = y + _gaussian_noise(rng, R, N) - HX
    return forecast + la.cho_solve(cho, innovations.T).T @ PHt.T


def enkf_step(ens: Ensemble, spec: StateSpaceSpec, y, seed=None) -> Ensemble:
    """One forecast/analysis cycle; the point estimate is the member mean."""
    if ens.dim != spec.dim:
        raise FilterError("ensemble dimension does not match the model")
    rng = np.random.default_rng(seed)
    forecast = enkf_forecast(ens, spec, rng)
    return Ensemble(enkf_analysis(forecast, spec, y, rng), rng_seed=seed)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def multinomial_resample(weights, rng) -> np.ndarray:
    """Indices of ``N`` draws with replacement, probabilities ``weights``."""
    w = np.asarray(weights, dtype=float)
    counts = rng.multinomial(w.size, w / w.sum())
    return np.repeat(np.arange(w.size), counts)


def pf_init(mean, cov, N: int, seed=None) -> ParticleSet:
    ens = enkf_init(mean, cov, N, seed)
    return ParticleSet(ens.members, np.full(N, 1.0 / N))


def pf_step(ps: ParticleSet, spec: StateSpaceSpec, y, seed=None,
            threshold: float = 0.5) -> ParticleSet:
    """Bootstrap particle filter step.

    Particles are propagated with process noise, reweighted by the Gaussian
    likelihood of ``y`` and multinomially resampled to equal weights when
    the effective sample size drops below ``threshold * N``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    rng = np.random.default_rng(seed)
    X = np.asarray(spec.propagate(ps.particles), dtype=float)
    X = X + _gaussian_noise(rng, spec.process_cov, X.shape[0])
    resid = y - X @ spec.obs_matrix.T
    R = spec.meas_cov
    if R.ndim == 1:
        maha = np.sum(resid**2 / R, axis=1)
    else:
        cho = la.cho_factor(R, lower=True)
        maha = np.sum(resid * la.cho_solve(cho, resid.T).T, axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) - 0.5 * maha
    top = np.max(logw)
    if not np.isfinite(top):
        raise FilterDivergence(
            f"filter divergence: all likelihoods vanish "
            f"(min Mahalanobis distance {np.sqrt(np.nanmin(maha)):.3e})"
        )
    w = np.exp(logw - top)
    w /= w.sum()
    if effective_sample_size(w) < threshold * w.size:
        idx = multinomial_resample(w, rng)
        X, w = X[idx], np.full(w.size, 1.0 / w.size)
    return ParticleSet(X, w)
