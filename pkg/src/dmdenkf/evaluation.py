"""Error metrics and summaries for eigenvalue tracking and forecasting."""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .dmd import sort_spectrum

__all__ = [
    "LOG_SCORE_FLOOR",
    "EigTrackRecord",
    "ForecastRecord",
    "dominant_eigenvalue",
    "wrap_angle",
    "modulus_argument_errors",
    "relative_error",
    "log_score",
    "ensemble_prob_within_half",
    "season_of",
    "in_season",
    "season_filter",
    "iso_weeks_in_year",
    "outlier_rate_iqr",
    "write_metric_table",
]

LOG_SCORE_FLOOR = 1e-10


@dataclass(frozen=True)
class EigTrackRecord:
    """Per-step true and estimated dominant temporal mode of one run.

    ``pair_found[k]`` is False where the estimate had no conjugate pair; the
    modulus then comes from the dominant (real) eigenvalue and the argument
    estimate is not meaningful.
    """

    true_modulus: np.ndarray
    true_argument: np.ndarray
    est_modulus: np.ndarray
    est_argument: np.ndarray
    pair_found: np.ndarray

    def __post_init__(self):
        for name in ("true_argument", "est_argument"):
            object.__setattr__(self, name, np.mod(np.asarray(getattr(self, name), float), 2 * np.pi))
        object.__setattr__(self, "pair_found", np.asarray(self.pair_found, dtype=bool))

    @classmethod
    def from_spectra(cls, spectra, true_modulus, true_argument) -> EigTrackRecord:
        est = [dominant_eigenvalue(lam) for lam in spectra]
        return cls(
            true_modulus=np.asarray(true_modulus, dtype=float),
            true_argument=np.asarray(true_argument, dtype=float),
            est_modulus=np.array([e[0] for e in est]),
            est_argument=np.array([e[1] for e in est]),
            pair_found=np.array([e[2] for e in est]),
        )


@dataclass(frozen=True)
class ForecastRecord:
    target: int
    horizon: int
    point: np.ndarray
    truth: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def dominant_eigenvalue(spectrum, tol: float = 1e-8) -> tuple[float, float, bool]:
    """``(modulus, argument, pair_found)`` of the leading temporal mode.

    With a conjugate pair present, the largest-modulus pair is used and the
    argument is that of its upper-half-plane member.  Otherwise the modulus
    of the dominant eigenvalue is returned with its argument (0 or pi).
    """
    lam = np.asarray(spectrum, dtype=complex)
    lam = lam[sort_spectrum(lam)]
    complex_idx = np.flatnonzero(np.abs(lam.imag) > tol)
    if complex_idx.size:
        top = lam[complex_idx[0]]
        return float(abs(top)), float(abs(np.angle(top))), True
    top = lam[0]
    return float(abs(top)), float(np.mod(np.angle(top), 2 * np.pi)), False


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    return np.pi - np.mod(np.pi - a, 2 * np.pi)


def modulus_argument_errors(records, include_failed: bool = False):
    """Mean absolute modulus error and the signed argument errors.

    Argument errors are wrapped to ``(-pi, pi]``.  Steps without a detected
    pair contribute to the modulus error only, unless ``include_failed``.

    Returns
    -------
    mean_modulus_error : float
    argument_errors : ndarray
    """
    if isinstance(records, EigTrackRecord):
        records = [records]
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    mod_err = np.concatenate([np.abs(r.est_modulus - r.true_modulus) for r in records])
    if mod_err.size == 0:
        raise ValueError("no records to evaluate")
    arg_err = []
    for r in records:
        keep = np.ones_like(r.pair_found) if include_failed else r.pair_found
        arg_err.append(wrap_angle(r.est_argument - r.true_argument)[keep])
    return float(np.mean(mod_err)), np.concatenate(arg_err)


def relative_error(forecast, truth) -> float:
    """``||truth - forecast|| / ||truth||``."""
    truth = np.asarray(truth, dtype=float)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("relative error undefined for a zero truth vector")
    return float(np.linalg.norm(truth - np.asarray(forecast, dtype=float)) / norm)


def log_score(probs, floor: float = LOG_SCORE_FLOOR) -> float:
    """Geometric mean of probabilities, each floored at ``floor``."""
    p = np.asarray(probs, dtype=float)
    if p.size == 0:
        raise ValueError("log score of an empty list")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.exp(np.mean(np.log(np.maximum(p, floor)))))


def ensemble_prob_within_half(forecast, truth: float, half_width: float = 0.5) -> float:
    """Probability mass within ``truth +/- half_width``.

    ``forecast`` is either a 1-D array of ensemble members or an object with
    a ``cdf`` method (e.g. :class:`~dmdenkf.baselines.KdeForecast`).
    """
    lo, hi = truth - half_width, truth + half_width
    if hasattr(forecast, "cdf"):
        return float(forecast.cdf(hi) - forecast.cdf(lo))
    x = np.asarray(forecast, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty ensemble")
    return float(np.mean((x >= lo) & (x <= hi)))


def season_of(year: int, week: int) -> int:
    """Starting year of the flu season a week belongs to."""
    return year if week >= 40 else year - 1


def in_season(week: int, start: int = 40, end: int = 20) -> bool:
    return week >= start or week <= end


def season_filter(records, seasons=None, start: int = 40, end: int = 20):
    """Keep records from week ``start`` through week ``end`` of the next year.

    Records need ``year`` and ``week`` attributes (or keys).  ``seasons``
    optionally restricts to season starting years, e.g. ``range(2012, 2018)``
    for 2012/13 to 2017/18.
    """
    out = []
    allowed = None if seasons is None else set(seasons)
    for rec in records:
        year, week = _year_week(rec)
        if not in_season(week, start, end):
            continue
        if allowed is not None and season_of(year, week) not in allowed:
            continue
        out.append(rec)
    return out


def _year_week(rec):
    if isinstance(rec, dict):
        return int(rec["year"]), int(rec["week"])
    if isinstance(rec, tuple):
        return int(rec[0]), int(rec[1])
    return int(rec.year), int(rec.week)


def iso_weeks_in_year(year: int) -> int:
    return _dt.date(year, 12, 28).isocalendar()[1]


def outlier_rate_iqr(errors, whisker: float = 1.5) -> float:
    """Fraction of values above ``Q3 + whisker * IQR``."""
    e = np.asarray(errors, dtype=float)
    if e.size < 4:
        raise ValueError("need at least 4 runs")
    finite = e[np.isfinite(e)]
    q1, q3 = np.percentile(finite, [25, 75])
    limit = q3 + whisker * (q3 - q1)
    return float(np.mean(~(e <= limit)))


def write_metric_table(path, rows, header_lines=()) -> None:
    """CSV with columns ``method, sigma, metric, value, n_runs, seed_base``.

    ``header_lines`` are written first as ``# `` comments (config echo).
    """
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sigma", "metric", "value", "n_runs", "seed_base"])
        for row in rows:
            w.writerow([row["method"], row["sigma"], row["metric"], repr(float(row["value"])),
                        row["n_runs"], row["seed_base"]])
