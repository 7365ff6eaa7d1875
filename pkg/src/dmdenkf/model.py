"""DMD spin-up followed by ensemble Kalman filtering of state and temporal modes.

A DMD (or Hankel-DMD) fit on the first ``m`` snapshots fixes the spatial
modes.  The filter then tracks the augmented state
``z = [x; mu]`` where ``mu`` is a real encoding of the temporal modes
(moduli of real modes and pair leaders, arguments of pair followers), so
every member decodes to a conjugate-closed spectrum and every forecast is
real.  Each member is propagated with its own decoded spectrum.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dmd import (
    PAIR_TOL,
    DmdError,
    DmdModel,
    InsufficientDataError,
    SvdTruncation,
    build_snapshots,
    check_conjugate_closed,
    fit_exact_dmd,
    fit_tdmd,
)
from .filters import (
    Ensemble,
    StateSpaceSpec,
    enkf_analysis,
    enkf_forecast,
    ensemble_from_factor,
)

__all__ = [
    "DecodeError",
    "TemporalModeEncoding",
    "encode_mu",
    "decode_lambda",
    "decode_many",
    "DmdEnkfConfig",
    "HistoryEntry",
    "Forecast",
    "SpinUp",
    "DmdEnkfModel",
    "fit_spin_up",
    "spin_up",
    "state_space",
    "assimilate",
    "forecast",
    "forecast_members",
    "eigenvalue_estimate",
    "innovation_norms",
    "detect_and_respin",
    "model_to_json",
    "model_from_json",
]


class DecodeError(ValueError):
    """Raised when an encoded spectrum cannot be turned back into eigenvalues."""

    def __init__(self, message, member=None):
        super().__init__(message)
        self.member = member


@dataclass(frozen=True)
class TemporalModeEncoding:
    """Real parameters ``mu`` plus the conjugate-pair layout they encode.

    For a pair ``(i, j)`` slot ``i`` holds the modulus and slot ``j`` the
    argument of ``lambda_i``; ``lambda_j`` is its conjugate.  ``signs``
    keeps the sign of real temporal modes, whose slots hold moduli.
    """

    mu: np.ndarray
    pairing: tuple
    signs: np.ndarray

    def decode(self) -> np.ndarray:
        return decode_lambda(self)


def encode_mu(eigenvalues, pairing, tol: float = PAIR_TOL) -> TemporalModeEncoding:
    lam = np.asarray(eigenvalues, dtype=complex)
    try:
        check_conjugate_closed(lam, pairing, tol)
    except DmdError as exc:
        raise DecodeError(f"spectrum is not conjugate-closed: {exc}") from exc
    mu = np.empty(lam.size)
    signs = np.ones(lam.size)
    for g in pairing:
        if len(g) == 1:
            (i,) = g
            mu[i] = abs(lam[i].real)
            signs[i] = -1.0 if lam[i].real < 0 else 1.0
        else:
            i, j = g
            mu[i] = abs(lam[i])
            mu[j] = np.mod(np.angle(lam[i]), 2 * np.pi)
    return TemporalModeEncoding(mu, tuple(tuple(g) for g in pairing), signs)


def decode_many(mu: np.ndarray, enc: TemporalModeEncoding) -> np.ndarray:
    """Decode an ``(N, r)`` matrix of parameters, one spectrum per row.

    Raises
    ------
    DecodeError
        If any modulus slot is negative; ``member`` names the first bad row.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    lam = np.empty(mu.shape, dtype=complex)
    for g in enc.pairing:
        i = g[0]
        bad = np.flatnonzero(mu[:, i] < 0)
        if bad.size:
            raise DecodeError(
                f"negative modulus {mu[bad[0], i]:.3e} in slot {i} of member {bad[0]}",
                member=int(bad[0]),
            )
        if len(g) == 1:
            lam[:, i] = enc.signs[i] * mu[:, i]
        else:
            j = g[1]
            lam[:, i] = mu[:, i] * np.exp(1j * mu[:, j])
            lam[:, j] = np.conj(lam[:, i])
    return lam


def decode_lambda(enc: TemporalModeEncoding) -> np.ndarray:
    return decode_many(enc.mu[None, :], enc)[0]


@dataclass(frozen=True)
class DmdEnkfConfig:
    """Settings for spin-up and filtering.

    ``alpha1``/``alpha2`` are the process variances of the state and
    temporal-mode blocks; left as ``None`` they default to
    ``1e-2 * var(spin-up data)`` and ``1e-5 * alpha1``.  ``meas_var`` is the
    diagonal of ``R`` (scalar or length-``n``); ``None`` uses the spin-up
    one-step residual variance.
    """

    spin_up_length: int = 100
    truncation: SvdTruncation = field(default_factory=SvdTruncation.full)
    delay: int = 1
    alpha1: float | None = None
    alpha2: float | None = None
    meas_var: float | tuple | None = None
    ensemble_size: int = 50
    seed: int = 0
    method: str = "tdmd"

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.delay < 1:
            raise ValueError("delay must be >= 1")
        if self.method not in ("tdmd", "exact"):
            raise ValueError(f"unknown DMD method {self.method!r}")
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0")
        if self.alpha1 is not None and self.alpha2 is not None and not self.alpha2 < self.alpha1:
            raise ValueError("alpha2 must be smaller than alpha1")
        if self.meas_var is not None and np.any(np.asarray(self.meas_var) <= 0):
            raise ValueError("meas_var must be > 0")
        if isinstance(self.meas_var, (list, np.ndarray)):
            object.__setattr__(self, "meas_var", tuple(float(v) for v in self.meas_var))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["truncation"] = self.truncation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> DmdEnkfConfig:
        data = dict(data)
        data["truncation"] = SvdTruncation.from_dict(data["truncation"])
        if isinstance(data.get("meas_var"), list):
            data["meas_var"] = tuple(data["meas_var"])
        return cls(**data)


@dataclass(frozen=True)
class HistoryEntry:
    state: np.ndarray
    eigenvalues: np.ndarray
    prior_mean: np.ndarray
    innovation: np.ndarray


@dataclass(frozen=True)
class Forecast:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    members: np.ndarray


@dataclass(frozen=True)
class SpinUp:
    """Everything the spin-up fit hands to the filter."""

    dmd: DmdModel
    encoding: TemporalModeEncoding
    z0: np.ndarray
    prior_factor: np.ndarray
    residual_var: np.ndarray
    data_var: float


@dataclass(frozen=True)
class DmdEnkfModel:
    dmd: DmdModel
    encoding: TemporalModeEncoding
    ensemble: Ensemble
    config: DmdEnkfConfig
    alpha1: float
    alpha2: float
    meas_var: np.ndarray
    step: int = 0
    history: tuple = ()

    @property
    def n(self) -> int:
        return self.dmd.n

    @property
    def n_eff(self) -> int:
        return self.dmd.n_eff

    @property
    def rank(self) -> int:
        return self.dmd.rank

    def state_estimate(self) -> np.ndarray:
        return self.ensemble.mean()[:self.n]


def _rng(seed, *keys):
    return np.random.default_rng([int(seed), *keys])


def fit_spin_up(series, config: DmdEnkfConfig) -> SpinUp:
    """Fit the spin-up DMD and build the initial mean and covariance factor.

    The state block of the prior covariance is the one-step residual
    covariance ``C = (1/m) E E^T`` with ``E = X' - Phi Lambda Phi^+ X``; it is
    kept in factored form ``E / sqrt(m)``.  The temporal-mode block is
    ``alpha2 * I``.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    m = config.spin_up_length
    if data.shape[0] < m:
        raise InsufficientDataError(
            f"insufficient data: spin-up needs {m} snapshots, got {data.shape[0]}"
        )
    pair = build_snapshots(data[:m], config.delay)
    fit = fit_tdmd if config.method == "tdmd" else fit_exact_dmd
    dmd = fit(pair, config.truncation)
    enc = encode_mu(dmd.eigenvalues, dmd.pairing)
    resid = pair.Xprime - dmd.operator() @ pair.X
    data_var = float(np.var(data[:m]))
    alpha1, alpha2 = _resolve_alphas(config, data_var)
    r = dmd.rank
    factor = np.zeros((dmd.n_eff + r, resid.shape[1] + r))
    factor[:dmd.n_eff, :resid.shape[1]] = resid / math.sqrt(m)
    factor[dmd.n_eff:, resid.shape[1]:] = math.sqrt(alpha2) * np.eye(r)
    z0 = np.concatenate([pair.Xprime[:, -1], enc.mu])
    residual_var = np.sum(resid[:dmd.n] ** 2, axis=1) / m
    return SpinUp(dmd, enc, z0, factor, residual_var, data_var)


def _resolve_alphas(config: DmdEnkfConfig, data_var: float) -> tuple[float, float]:
    scale = data_var if data_var > 0 else 1.0
    alpha1 = config.alpha1 if config.alpha1 is not None else 1e-2 * scale
    alpha2 = config.alpha2 if config.alpha2 is not None else 1e-5 * alpha1
    if not alpha2 < alpha1:
        raise ValueError("alpha2 must be smaller than alpha1")
    return alpha1, alpha2


def _resolve_meas_var(config: DmdEnkfConfig, fit: SpinUp) -> np.ndarray:
    n = fit.dmd.n
    if config.meas_var is not None:
        mv = np.broadcast_to(np.asarray(config.meas_var, dtype=float), (n,)).copy()
        return mv
    floor = 1e-8 * (fit.data_var if fit.data_var > 0 else 1.0)
    return np.maximum(fit.residual_var, floor)


def spin_up(series, config: DmdEnkfConfig) -> DmdEnkfModel:
    """Fit the spin-up model on ``series[:m]`` and draw the initial ensemble."""
    fit = fit_spin_up(series, config)
    alpha1, alpha2 = _resolve_alphas(config, fit.data_var)
    ens = ensemble_from_factor(fit.z0, fit.prior_factor, config.ensemble_size,
                               seed=[int(config.seed), 0])
    return DmdEnkfModel(
        dmd=fit.dmd,
        encoding=fit.encoding,
        ensemble=ens,
        config=config,
        alpha1=alpha1,
        alpha2=alpha2,
        meas_var=_resolve_meas_var(config, fit),
    )


def _propagate_members(Z: np.ndarray, dmd: DmdModel, enc: TemporalModeEncoding,
                       p: int = 1) -> np.ndarray:
    n_eff = dmd.n_eff
    lam = decode_many(Z[:, n_eff:], enc)
    coeff = Z[:, :n_eff] @ dmd.modes_pinv.T
    x = ((coeff * lam**p) @ dmd.modes.T).real
    return np.hstack([x, Z[:, n_eff:]])


def state_space(model: DmdEnkfModel) -> StateSpaceSpec:
    """Augmented-state model: per-member DMD map, random-walk temporal modes.

    ``Q = diag(alpha1 I, alpha2 I)``; the observation picks the newest ``n``
    rows of the (embedded) state.
    """
    n, n_eff, r = model.n, model.n_eff, model.rank
    H = np.zeros((n, n_eff + r))
    H[:, :n] = np.eye(n)
    Q = np.concatenate([np.full(n_eff, model.alpha1), np.full(r, model.alpha2)])
    dmd, enc = model.dmd, model.encoding
    return StateSpaceSpec(
        propagate=lambda Z: _propagate_members(Z, dmd, enc),
        obs_matrix=H,
        process_cov=Q,
        meas_cov=model.meas_var,
    )


def assimilate(model: DmdEnkfModel, y) -> DmdEnkfModel:
    """Assimilate one observation of the original ``n``-dimensional state."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.n,):
        raise ValueError(f"observation has shape {y.shape}, expected ({model.n},)")
    spec = state_space(model)
    rng = _rng(model.config.seed, 1, model.step)
    prior = enkf_forecast(model.ensemble, spec, rng)
    posterior = enkf_analysis(prior, spec, y, rng)
    ens = Ensemble(posterior, rng_seed=(model.config.seed, 1, model.step))
    prior_mean = prior.mean(axis=0)[:model.n]
    mu_mean = posterior[:, model.n_eff:].mean(axis=0)
    entry = HistoryEntry(
        state=posterior[:, :model.n].mean(axis=0),
        eigenvalues=decode_many(mu_mean, model.encoding)[0],
        prior_mean=prior_mean,
        innovation=y - prior_mean,
    )
    return replace(model, ensemble=ens, step=model.step + 1,
                   history=model.history + (entry,))


def eigenvalue_estimate(model: DmdEnkfModel) -> np.ndarray:
    """Temporal modes decoded from the ensemble-mean parameters."""
    mu = model.ensemble.members[:, model.n_eff:].mean(axis=0)
    return decode_many(mu, model.encoding)[0]


def forecast_members(model: DmdEnkfModel, p: int) -> np.ndarray:
    """Each member advanced ``p`` steps with its own spectrum; ``(N, n)``."""
    if p < 1:
        raise ValueError("forecast horizon must be >= 1")
    Z = _propagate_members(model.ensemble.members, model.dmd, model.encoding, p)
    return Z[:, :model.n]


def forecast(model: DmdEnkfModel, p: int, coverage: float = 0.95) -> Forecast:
    """Member-mean forecast ``p`` steps ahead with an empirical percentile band."""
    X = forecast_members(model, p)
    tail = 50 * (1 - coverage)
    lower, upper = np.percentile(X, [tail, 100 - tail], axis=0)
    return Forecast(point=X.mean(axis=0), lower=lower, upper=upper, members=X)


def innovation_norms(model: DmdEnkfModel) -> np.ndarray:
    return np.array([np.linalg.norm(h.innovation) for h in model.history])


def detect_and_respin(model: DmdEnkfModel, recent_errors, threshold: float | None = None,
                      window: int = 10, full_series=None) -> DmdEnkfModel:
    """Re-run the spin-up on all data so far if errors stay too large.

    The trigger fires when the rolling mean (over ``window`` steps) of
    ``recent_errors`` exceeds ``threshold`` at each of the last ``window``
    steps.  The default threshold is three times the innovation magnitude
    expected from measurement noise alone, ``3 * sqrt(sum(R))``.
    """
    errors = np.asarray(recent_errors, dtype=float)
    if errors.size < 2 * window - 1 or full_series is None:
        return model
    if threshold is None:
        threshold = 3.0 * math.sqrt(float(np.sum(model.meas_var)))
    kernel = np.ones(window) / window
    rolling = np.convolve(errors, kernel, mode="valid")
    if not np.all(rolling[-window:] > threshold):
        return model
    data = np.asarray(full_series, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    config = replace(model.config, spin_up_length=data.shape[0])
    fit = fit_spin_up(data, config)
    seed = [int(config.seed), 2, model.step]
    ens = ensemble_from_factor(fit.z0, fit.prior_factor, config.ensemble_size, seed=seed)
    alpha1, alpha2 = _resolve_alphas(config, fit.data_var)
    return DmdEnkfModel(
        dmd=fit.dmd,
        encoding=fit.encoding,
        ensemble=ens,
        config=config,
        alpha1=alpha1,
        alpha2=alpha2,
        meas_var=_resolve_meas_var(config, fit),
        step=model.step,
        history=model.history,
    )


def _complex_to_json(a) -> dict:
    a = np.asarray(a, dtype=complex)
    return {"real": a.real.tolist(), "imag": a.imag.tolist()}


def _complex_from_json(d) -> np.ndarray:
    return np.asarray(d["real"]) + 1j * np.asarray(d["imag"])


def model_to_json(model: DmdEnkfModel) -> str:
    """Serialize a model to the checkpoint JSON schema (version 1)."""
    doc = {
        "schema": "dmdenkf-model/1",
        "dmd": {
            "modes": _complex_to_json(model.dmd.modes),
            "eigenvalues": _complex_to_json(model.dmd.eigenvalues),
            "amplitudes": _complex_to_json(model.dmd.amplitudes),
            "pairing": [list(g) for g in model.dmd.pairing],
            "n": model.dmd.n,
            "d": model.dmd.d,
            "zero_modes": list(model.dmd.zero_modes),
        },
        "encoding": {
            "mu": model.encoding.mu.tolist(),
            "pairing": [list(g) for g in model.encoding.pairing],
            "signs": model.encoding.signs.tolist(),
        },
        "config": model.config.to_dict(),
        "alpha1": model.alpha1,
        "alpha2": model.alpha2,
        "meas_var": model.meas_var.tolist(),
        "step": model.step,
        "ensemble": model.ensemble.members.tolist(),
        "history": [
            {
                "state": h.state.tolist(),
                "eigenvalues": _complex_to_json(h.eigenvalues),
                "prior_mean": h.prior_mean.tolist(),
                "innovation": h.innovation.tolist(),
            }
            for h in model.history
        ],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> DmdEnkfModel:
    doc = json.loads(text)
    if doc.get("schema") != "dmdenkf-model/1":
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")
    d = doc["dmd"]
    dmd = DmdModel(
        modes=_complex_from_json(d["modes"]),
        eigenvalues=_complex_from_json(d["eigenvalues"]),
        amplitudes=_complex_from_json(d["amplitudes"]),
        pairing=tuple(tuple(g) for g in d["pairing"]),
        n=d["n"],
        d=d["d"],
        zero_modes=tuple(d["zero_modes"]),
    )
    e = doc["encoding"]
    enc = TemporalModeEncoding(np.asarray(e["mu"]), tuple(tuple(g) for g in e["pairing"]),
                               np.asarray(e["signs"]))
    config = DmdEnkfConfig.from_dict(doc["config"])
    history = tuple(
        HistoryEntry(np.asarray(h["state"]), _complex_from_json(h["eigenvalues"]),
                     np.asarray(h["prior_mean"]), np.asarray(h["innovation"]))
        for h in doc["history"]
    )
    return DmdEnkfModel(
        dmd=dmd,
        encoding=enc,
        ensemble=Ensemble(np.asarray(doc["ensemble"])),
        config=config,
        alpha1=doc["alpha1"],
        alpha2=doc["alpha2"],
        meas_var=np.asarray(doc["meas_var"]),
        step=doc["step"],
        history=history,
    )
