"""Iterative DMD baselines and the historical-baseline density forecast."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .dmd import DmdModel, SvdTruncation, build_snapshots, fit_tdmd, sort_spectrum

__all__ = [
    "streaming_tdmd_step",
    "WindowedTdmdState",
    "windowed_tdmd_step",
    "OnlineDmdState",
    "online_dmd_init",
    "online_dmd_step",
    "silverman_bandwidth",
    "KdeForecast",
    "HistoricalBaseline",
    "kde_predict",
]


def streaming_tdmd_step(data_so_far, trunc: SvdTruncation | None = None) -> DmdModel:
    """Batch TDMD on every snapshot seen so far (stand-in for streaming TDMD)."""
    return fit_tdmd(build_snapshots(data_so_far, 1), trunc)


@dataclass(frozen=True)
class WindowedTdmdState:
    w: int = 10
    trunc: SvdTruncation = field(default_factory=SvdTruncation.full)
    buffer: tuple = ()

    def __post_init__(self):
        if self.w < 2:
            raise ValueError("window must hold at least 2 snapshots")

    @property
    def ready(self) -> bool:
        return len(self.buffer) >= 2


def windowed_tdmd_step(state: WindowedTdmdState, new_snapshot):
    """Push a snapshot and refit TDMD on the ``w`` most recent ones.

    Returns ``(state, model)``; ``model`` is ``None`` while the window is
    still warming up (fewer than two snapshots, or fewer than the
    truncation rank needs).
    """
    x = np.atleast_1d(np.asarray(new_snapshot, dtype=float))
    buf = (state.buffer + (x,))[-state.w:]
    state = replace(state, buffer=buf)
    if not state.ready:
        return state, None
    data = np.vstack(buf)
    if state.trunc.policy == "fixed_rank" and len(buf) - 1 < state.trunc.value:
        return state, None
    return state, fit_tdmd(build_snapshots(data, 1), state.trunc)


@dataclass(frozen=True)
class OnlineDmdState:
    """Exponentially weighted least-squares operator ``A_hat``.

    ``P`` is the inverse of the weighted Gram matrix
    ``sum_j rho^(k-j) x_j x_j^T``.
    """

    A: np.ndarray
    P: np.ndarray
    rho: float = 0.9
    steps: int = 0
    condition: float = 1.0

    def spectrum(self) -> np.ndarray:
        lam = np.linalg.eigvals(self.A)
        return lam[sort_spectrum(lam)]


def online_dmd_init(series, rho: float = 0.9) -> OnlineDmdState:
    """Weighted batch fit on an initial block of snapshots (rows in time order)."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    data = np.asarray(series, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    X, Y = data[:-1].T, data[1:].T
    k = X.shape[1]
    sw = np.sqrt(rho ** np.arange(k - 1, -1, -1))
    Xw, Yw = X * sw, Y * sw
    G = Xw @ Xw.T
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise ValueError("initial block does not span the state space")
    P = np.linalg.inv(G)
    P = 0.5 * (P + P.T)
    return OnlineDmdState(A=Yw @ Xw.T @ P, P=P, rho=rho, condition=float(np.linalg.cond(G)))


def online_dmd_step(state: OnlineDmdState, x_in, x_out):
    """Rank-one update with forgetting factor ``rho``.

    Returns ``(state, spectrum)``.  After the update a sample ``k`` steps old
    carries weight ``rho**k`` relative to the newest one.
    """
    x = np.asarray(x_in, dtype=float).ravel()
    y = np.asarray(x_out, dtype=float).ravel()
    P = state.P / state.rho
    Px = P @ x
    gamma = 1.0 / (1.0 + x @ Px)
    A = state.A + gamma * np.outer(y - state.A @ x, Px)
    P = P - gamma * np.outer(Px, Px)
    asym = np.max(np.abs(P - P.T))
    if asym > 1e-10 * max(1.0, np.max(np.abs(P))):
        warnings.warn(f"online DMD inverse Gramian lost symmetry ({asym:.2e}); re-symmetrizing")
    P = 0.5 * (P + P.T)
    new = OnlineDmdState(A=A, P=P, rho=state.rho, steps=state.steps + 1,
                         condition=float(np.linalg.cond(P)))
    return new, new.spectrum()


def silverman_bandwidth(samples, floor: float = 1e-3) -> float:
    """``0.9 * min(std, IQR / 1.34) * n^(-1/5)``.

    Falls back to whichever spread estimate is positive, and to ``floor``
    when the samples have no spread at all.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.34
    spread = [v for v in (sd, iqr) if v > 0]
    if not spread:
        return floor
    return max(0.9 * min(spread) * n ** (-0.2), floor)


@dataclass(frozen=True)
class KdeForecast:
    """Equal-weight Gaussian mixture."""

    centers: np.ndarray
    bandwidth: float

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.centers) / self.bandwidth
        return np.exp(-0.5 * z**2).mean(axis=-1) / (self.bandwidth * np.sqrt(2 * np.pi))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return special.ndtr((x[..., None] - self.centers) / self.bandwidth).mean(axis=-1)

    def prob_between(self, lo: float, hi: float) -> float:
        return float(self.cdf(hi) - self.cdf(lo))

    def median(self, tol: float = 1e-10) -> float:
        lo = self.centers.min() - 10 * self.bandwidth
        hi = self.centers.max() + 10 * self.bandwidth
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < 0.5:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class HistoricalBaseline:
    """Per-week samples (weeks 1..53) of earlier seasons' rates.

    Build with :meth:`from_history`, which keeps years before
    ``target_year`` only and drops ``exclude_years``.
    """

    samples: dict
    min_bandwidth: float = 1e-3

    @classmethod
    def from_history(cls, years, weeks, values, target_year: int,
                     exclude_years=(2009,), min_bandwidth: float = 1e-3) -> HistoricalBaseline:
        years = np.asarray(years)
        weeks = np.asarray(weeks)
        values = np.asarray(values, dtype=float)
        keep = (years < target_year) & ~np.isin(years, list(exclude_years))
        samples = {}
        for wk in range(1, 54):
            sel = keep & (weeks == wk)
            if np.any(sel):
                samples[wk] = values[sel]
        # week 53 exists only in some years; borrow week 52's samples
        if 53 not in samples and 52 in samples:
            samples[53] = samples[52]
        return cls(samples, min_bandwidth)

    def has_week(self, week: int) -> bool:
        return week in self.samples and len(self.samples[week]) > 0


def kde_predict(hb: HistoricalBaseline, week: int) -> tuple[KdeForecast, float]:
    """Density for ``week`` and its median as the point forecast."""
    if not hb.has_week(week):
        raise ValueError(f"no historical samples for week {week}")
    x = np.asarray(hb.samples[week], dtype=float)
    kde = KdeForecast(x, silverman_bandwidth(x, hb.min_bandwidth))
    return kde, kde.median()
