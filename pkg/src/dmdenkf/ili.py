"""ILINet-style data ingestion and the weekly ILI forecasting experiment.

The input CSV has header ``year,week,region,age_group,ili,total_patients``
with one row per (week, HHS region, age group).  The 40 strata are ordered
region-major with age groups ascending, so column ``4 * (region - 1) + a``
holds age group ``a`` of ``region``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as dm
from .baselines import HistoricalBaseline, KdeForecast, kde_predict, silverman_bandwidth
from .dmd import SvdTruncation
from .evaluation import log_score, season_filter, season_of

__all__ = [
    "AGE_GROUPS",
    "REGIONS",
    "ILI_HEADER",
    "IliDataError",
    "IliWeekRecord",
    "PopulationShare",
    "CensusShares",
    "load_ili_csv",
    "write_ili_csv",
    "load_census_csv",
    "allocate_age_totals",
    "stratum_records",
    "transform",
    "inverse_transform",
    "rate_matrix",
    "make_ili_fixture",
    "IliExperimentConfig",
    "ExperimentResult",
    "run_ili_experiment",
    "rank_sweep",
]

AGE_GROUPS = ("0-4", "5-24", "25-64", "65+")
REGIONS = tuple(range(1, 11))
ILI_HEADER = ("year", "week", "region", "age_group", "ili", "total_patients")
N_STRATA = len(REGIONS) * len(AGE_GROUPS)


class IliDataError(ValueError):
    """Malformed or inconsistent ILI input."""


@dataclass(frozen=True)
class IliWeekRecord:
    year: int
    week: int
    region: int
    age_group: str
    ili: float
    total_patients: float

    def __post_init__(self):
        if not 1 <= self.week <= 53:
            raise IliDataError(f"week {self.week} outside 1..53")
        if self.region not in REGIONS:
            raise IliDataError(f"region {self.region} outside 1..10")
        if self.age_group not in AGE_GROUPS:
            raise IliDataError(f"unknown age group {self.age_group!r}")
        if self.ili < 0 or self.total_patients < 0:
            raise IliDataError("counts must be non-negative")
        if self.ili > self.total_patients:
            raise IliDataError("ILI count exceeds total patients")

    @property
    def rate(self) -> float:
        """ILI consultations per 100 patients (0 when nobody was seen)."""
        return 100.0 * self.ili / self.total_patients if self.total_patients > 0 else 0.0

    @property
    def key(self) -> tuple:
        return (self.year, self.week, self.region, self.age_group)

    @property
    def stratum(self) -> int:
        return 4 * (self.region - 1) + AGE_GROUPS.index(self.age_group)


def load_ili_csv(path) -> list[IliWeekRecord]:
    """Read and validate an ILI CSV.

    Raises :class:`IliDataError` naming the line for malformed rows and the
    key for duplicated stratum-weeks.  Weeks with missing strata produce a
    warning listing them.
    """
    records = []
    seen = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ILI_HEADER:
            raise IliDataError(f"line 1: expected header {','.join(ILI_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(ILI_HEADER):
                raise IliDataError(f"line {line}: expected {len(ILI_HEADER)} fields, got {len(row)}")
            try:
                rec = IliWeekRecord(int(row[0]), int(row[1]), int(row[2]), row[3].strip(),
                                    float(row[4]), float(row[5]))
            except (ValueError, IliDataError) as exc:
                raise IliDataError(f"line {line}: {exc}") from None
            if rec.key in seen:
                raise IliDataError(f"line {line}: duplicate stratum-week {rec.key} "
                                   f"(first seen on line {seen[rec.key]})")
            seen[rec.key] = line
            records.append(rec)
    for (year, week), missing in _missing_strata(records).items():
        warnings.warn(f"{year}-W{week:02d}: {len(missing)} missing strata {missing}")
    return records


def _missing_strata(records) -> dict:
    present = {}
    for r in records:
        present.setdefault((r.year, r.week), set()).add((r.region, r.age_group))
    full = {(g, a) for g in REGIONS for a in AGE_GROUPS}
    return {wk: sorted(full - have) for wk, have in sorted(present.items()) if have != full}


def write_ili_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ILI_HEADER)
        for r in records:
            w.writerow([r.year, r.week, r.region, r.age_group, _num(r.ili), _num(r.total_patients)])


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class PopulationShare:
    date: _dt.date
    age_group: str
    share: float


class CensusShares:
    """Dated age-share anchors, linearly interpolated between anchors."""

    def __init__(self, shares):
        by_date = {}
        for s in shares:
            if s.age_group not in AGE_GROUPS:
                raise IliDataError(f"unknown age group {s.age_group!r}")
            by_date.setdefault(s.date, {})[s.age_group] = float(s.share)
        if not by_date:
            raise IliDataError("no census anchors")
        self.dates = sorted(by_date)
        rows = []
        for d in self.dates:
            if set(by_date[d]) != set(AGE_GROUPS):
                raise IliDataError(f"census anchor {d} does not cover all age groups")
            row = np.array([by_date[d][a] for a in AGE_GROUPS])
            if abs(row.sum() - 1.0) > 1e-9 or np.any(row < 0):
                raise IliDataError(f"census shares on {d} must be non-negative and sum to 1")
            rows.append(row)
        self.table = np.array(rows)
        self._ordinals = np.array([d.toordinal() for d in self.dates], dtype=float)

    def at(self, date: _dt.date) -> np.ndarray:
        """Shares for ``date``; error outside the anchor span."""
        t = float(date.toordinal())
        if t < self._ordinals[0] or t > self._ordinals[-1]:
            raise IliDataError(f"{date} outside census anchors {self.dates[0]}..{self.dates[-1]}")
        return np.array([np.interp(t, self._ordinals, self.table[:, j]) for j in range(len(AGE_GROUPS))])

    def at_week(self, year: int, week: int) -> np.ndarray:
        return self.at(_dt.date.fromisocalendar(year, week, 1))


def load_census_csv(path) -> CensusShares:
    """Read ``date,age_group,share`` rows (ISO dates)."""
    shares = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["date", "age_group", "share"]:
            raise IliDataError("line 1: expected header date,age_group,share")
        for row in reader:
            try:
                shares.append(PopulationShare(_dt.date.fromisoformat(row["date"].strip()),
                                              row["age_group"].strip(), float(row["share"])))
            except ValueError as exc:
                raise IliDataError(f"line {reader.line_num}: {exc}") from None
    return CensusShares(shares)


def allocate_age_totals(regional_totals, shares, integer: bool = True) -> np.ndarray:
    """Split each regional total across age groups in proportion to ``shares``.

    With ``integer`` the allocation uses largest-remainder rounding so every
    row sums to its regional total exactly.  Returns shape ``(..., 4)``.
    """
    totals = np.asarray(regional_totals, dtype=float)
    shares = np.asarray(shares, dtype=float)
    if np.any(totals < 0):
        raise IliDataError("regional totals must be non-negative")
    if abs(shares.sum() - 1.0) > 1e-9:
        raise IliDataError("age shares must sum to 1")
    exact = totals[..., None] * shares
    if not integer:
        return exact
    if np.any(totals != np.round(totals)):
        raise IliDataError("integer allocation needs integer totals")
    base = np.floor(exact)
    remainder = exact - base
    short = (totals - base.sum(axis=-1)).round().astype(int)
    out = base.reshape(-1, shares.size)
    rem = remainder.reshape(-1, shares.size)
    for i, k in enumerate(np.ravel(short)):
        # stable sort: ties go to the earlier age group
        out[i, np.argsort(-rem[i], kind="stable")[:k]] += 1
    return out.reshape(exact.shape).astype(int)


def stratum_records(year: int, week: int, region: int, ili_by_age, regional_total,
                    census: CensusShares) -> list[IliWeekRecord]:
    """Records for one region-week whose patient total is known only regionally."""
    totals = allocate_age_totals(regional_total, census.at_week(year, week))
    return [IliWeekRecord(year, week, region, a, float(c), float(t))
            for a, c, t in zip(AGE_GROUPS, ili_by_age, totals)]


def transform(rates, c: float = 1.0) -> np.ndarray:
    """``ln(rate + c)``."""
    r = np.asarray(rates, dtype=float)
    if np.any(r < 0):
        raise IliDataError("rates must be non-negative")
    return np.log(r + c)


def inverse_transform(x, c: float = 1.0, warn: bool = True) -> np.ndarray:
    """``exp(x) - c``, clamped at 0 (with a warning) where it dips below."""
    r = np.exp(np.asarray(x, dtype=float)) - c
    n_neg = int(np.sum(r < -1e-12))
    if n_neg and warn:
        warnings.warn(f"{n_neg} back-transformed values below 0 clamped")
    return np.maximum(r, 0.0)


def rate_matrix(records):
    """Weekly stratum rates as a ``(weeks, 40)`` matrix plus week keys.

    Returns ``(weeks, rates, totals)`` where ``weeks`` lists ``(year, week)``
    in time order and ``totals`` holds patient counts.  Missing strata are
    forward-filled from the previous week with a warning.
    """
    cells = {}
    for r in records:
        cells.setdefault((r.year, r.week), {})[r.stratum] = r
    weeks = sorted(cells)
    if not weeks:
        raise IliDataError("no records")
    rates = np.full((len(weeks), N_STRATA), np.nan)
    totals = np.full((len(weeks), N_STRATA), np.nan)
    for i, wk in enumerate(weeks):
        for s, rec in cells[wk].items():
            rates[i, s] = rec.rate
            totals[i, s] = rec.total_patients
        gaps = np.flatnonzero(np.isnan(rates[i]))
        if gaps.size:
            if i == 0:
                raise IliDataError(f"first week {wk} is incomplete; cannot forward-fill")
            warnings.warn(f"{wk[0]}-W{wk[1]:02d}: forward-filling {gaps.size} strata")
            rates[i, gaps] = rates[i - 1, gaps]
            totals[i, gaps] = totals[i - 1, gaps]
    return weeks, rates, totals


def _iso_weeks(year: int) -> int:
    return _dt.date(year, 12, 28).isocalendar()[1]


def make_ili_fixture(seed: int = 0, first_year: int = 2010, last_year: int = 2018,
                     noise: float = 0.1, patients: int = 20000) -> list[IliWeekRecord]:
    """Synthetic 40-stratum ILI records with an annual cycle.

    Log rates combine a stratum baseline, three period-52 harmonics whose
    timing and intensity shift from season to season, a national AR(1)
    disturbance with stratum loadings, and independent noise.  Data start in
    week 40 of ``first_year``; the default leaves a short spin-up record
    (two seasons before a 2012 split), where the truncation rank trades
    bias against noise fitting.
    """
    rng = np.random.default_rng([seed, 52])
    weeks = [(y, w) for y in range(first_year, last_year + 1) for w in range(1, _iso_weeks(y) + 1)]
    weeks = [wk for wk in weeks if wk >= (first_year, 40)]
    T = len(weeks)
    base = rng.uniform(1.0, 1.6, N_STRATA)
    amps = np.column_stack([rng.uniform(0.4, 0.9, N_STRATA), rng.uniform(0.1, 0.25, N_STRATA),
                            rng.uniform(0.03, 0.1, N_STRATA)])
    phases = np.column_stack([rng.normal(0.0, 0.15, N_STRATA), rng.uniform(0, 2 * np.pi, (N_STRATA, 2))])
    loading = rng.uniform(0.5, 1.5, N_STRATA)
    seasons = np.array([season_of(y, w) for y, w in weeks])
    labels = sorted(set(seasons))
    shift = dict(zip(labels, rng.uniform(-3.0, 3.0, len(labels))))
    intensity = dict(zip(labels, rng.uniform(0.7, 1.3, len(labels))))
    # peaks near week 5 of the new year, about 17 weeks after week 40
    t = np.arange(T) - 17 - np.array([shift[s] for s in seasons])
    phase = 2 * np.pi / 52.0 * t
    scale = np.array([intensity[s] for s in seasons])
    cycle = sum(amps[:, j] * np.cos((j + 1) * phase[:, None] + phases[:, j]) for j in range(3))
    shock = np.zeros(T)
    e = rng.normal(0.0, 0.06, T)
    for k in range(1, T):
        shock[k] = 0.9 * shock[k - 1] + e[k]
    log_rate = (base + scale[:, None] * cycle + shock[:, None] * loading
                + noise * rng.standard_normal((T, N_STRATA)))
    rates = np.exp(np.maximum(log_rate, 0.0)) - 1.0
    totals = rng.integers(patients // 2, patients, (T, N_STRATA))
    ili = np.minimum(np.round(rates / 100.0 * totals), totals)
    out = []
    for i, (y, w) in enumerate(weeks):
        for g in REGIONS:
            for a_idx, a in enumerate(AGE_GROUPS):
                s = 4 * (g - 1) + a_idx
                out.append(IliWeekRecord(y, w, g, a, float(ili[i, s]), float(totals[i, s])))
    return out


@dataclass(frozen=True)
class IliExperimentConfig:
    """Settings of one weekly forecasting run.

    ``split_year`` is the last year of spin-up data.  ``prob_method`` chooses
    how forecast probabilities are read off the ensemble: ``"kde"`` smooths
    the member values with a Silverman-bandwidth Gaussian kernel,
    ``"empirical"`` counts members.
    """

    delay: int = 1
    rank: int = 8
    horizons: tuple = (1, 2, 3, 4)
    split_year: int = 2012
    eval_seasons: tuple | None = None
    alpha1: float | None = None
    alpha2: float | None = None
    meas_var: float | None = None
    ensemble_size: int = 50
    seed: int = 0
    c: float = 1.0
    coverage: float = 0.95
    prob_method: str = "kde"
    baseline_exclude: tuple = (2009,)

    def __post_init__(self):
        if self.delay < 1 or self.rank < 1:
            raise ValueError("delay and rank must be >= 1")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be >= 1")
        if self.prob_method not in ("kde", "empirical"):
            raise ValueError(f"unknown prob_method {self.prob_method!r}")
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if self.eval_seasons is not None:
            object.__setattr__(self, "eval_seasons", tuple(int(s) for s in self.eval_seasons))
        object.__setattr__(self, "baseline_exclude", tuple(int(y) for y in self.baseline_exclude))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> IliExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ILI config keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class ExperimentResult:
    """Forecast rows and per-horizon metrics of one ILI run.

    ``forecasts`` rows are dicts with keys ``method, horizon, year, week,
    point, lower, upper, truth, prob``; ``metrics`` rows hold
    ``method, horizon, log_score, mse, n_weeks``.
    """

    config: IliExperimentConfig
    forecasts: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    rank_sweep: list = field(default_factory=list)

    def metric(self, method: str, horizon: int, name: str) -> float:
        for row in self.metrics:
            if row["method"] == method and row["horizon"] == horizon:
                return row[name]
        raise KeyError((method, horizon, name))

    def write_forecasts_csv(self, path) -> None:
        cols = ["method", "horizon", "year", "week", "point", "lower", "upper", "truth", "prob"]
        with open(path, "w", newline="") as fh:
            fh.write(f"# config {json.dumps(self.config.to_dict(), sort_keys=True)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.forecasts:
                w.writerow([_fmt(row[c]) for c in cols])

    def write_metrics_json(self, path) -> None:
        doc = {"config": self.config.to_dict(), "metrics": self.metrics, "rank_sweep": self.rank_sweep}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_rank_sweep_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# config {json.dumps(self.config.to_dict(), sort_keys=True)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "horizon", "log_score", "mse"])
            for row in self.rank_sweep:
                w.writerow([row["rank"], row["horizon"], _fmt(row["log_score"]), _fmt(row["mse"])])


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def _national_weights(totals_row: np.ndarray) -> np.ndarray:
    return totals_row / totals_row.sum()


def _prob_within(values: np.ndarray, truth: float, method: str) -> float:
    if method == "kde":
        kde = KdeForecast(values, silverman_bandwidth(values))
        return kde.prob_between(truth - 0.5, truth + 0.5)
    return float(np.mean(np.abs(values - truth) <= 0.5))


def run_ili_experiment(records, config: IliExperimentConfig = IliExperimentConfig()) -> ExperimentResult:
    """Spin up on weeks through ``split_year``, then filter and forecast weekly.

    After assimilating each post-split week the filter forecasts the national
    rate ``h`` weeks ahead for every requested horizon.  National rates weight
    the strata by the patient totals of the last assimilated week.  Scores are
    taken on in-season weeks (40 to 20) of ``eval_seasons`` (by default every
    season starting in or after ``split_year``), alongside the historical
    baseline for the same target weeks.
    """
    weeks, rates, totals = rate_matrix(records)
    split = sum(1 for y, _ in weeks if y <= config.split_year)
    if split < 2 * config.delay + config.rank or split >= len(weeks):
        raise IliDataError("not enough weeks on both sides of the split")
    x = transform(rates, config.c)
    national = (rates * totals).sum(axis=1) / totals.sum(axis=1)
    fcfg = dm.DmdEnkfConfig(
        spin_up_length=split,
        truncation=SvdTruncation.fixed_rank(config.rank),
        delay=config.delay,
        alpha1=config.alpha1,
        alpha2=config.alpha2,
        meas_var=config.meas_var,
        ensemble_size=config.ensemble_size,
        seed=config.seed,
    )
    model = dm.spin_up(x, fcfg)
    seasons = config.eval_seasons
    if seasons is None:
        seasons = range(config.split_year, season_of(*weeks[-1]) + 1)
    targets = {i for i, wk in enumerate(weeks) if i >= split and season_filter([wk], seasons)}
    years = np.array([y for y, _ in weeks])
    wk_no = np.array([w for _, w in weeks])
    baseline_cache = {}
    rows = []
    clamped = 0
    for t in range(split - 1, len(weeks) - 1):
        if t >= split:
            model = dm.assimilate(model, x[t])
        w_nat = _national_weights(totals[t])
        needed = [h for h in config.horizons if t + h in targets]
        if not needed:
            continue
        members = {}
        for h in needed:
            logs = dm.forecast_members(model, h)
            clamped += int(np.sum(np.exp(logs) - config.c < -1e-12))
            members[h] = inverse_transform(logs, config.c, warn=False) @ w_nat
        tail = 50 * (1 - config.coverage)
        for h in needed:
            i = t + h
            vals = members[h]
            lo, hi = np.percentile(vals, [tail, 100 - tail])
            rows.append({"method": "dmdenkf", "horizon": h, "year": weeks[i][0], "week": weeks[i][1],
                         "point": float(vals.mean()), "lower": float(lo), "upper": float(hi),
                         "truth": float(national[i]),
                         "prob": _prob_within(vals, float(national[i]), config.prob_method)})
            yr = weeks[i][0]
            if (yr, weeks[i][1]) not in baseline_cache:
                hb = HistoricalBaseline.from_history(years, wk_no, national, yr, config.baseline_exclude)
                if hb.has_week(weeks[i][1]):
                    kde, med = kde_predict(hb, weeks[i][1])
                    lo_b, hi_b = _kde_interval(kde, config.coverage)
                    baseline_cache[(yr, weeks[i][1])] = {
                        "method": "baseline", "year": yr, "week": weeks[i][1], "point": med,
                        "lower": lo_b, "upper": hi_b, "truth": float(national[i]),
                        "prob": kde.prob_between(national[i] - 0.5, national[i] + 0.5)}
                else:
                    baseline_cache[(yr, weeks[i][1])] = None
            base = baseline_cache[(yr, weeks[i][1])]
            if base is not None:
                rows.append(dict(base, horizon=h))
    if clamped:
        warnings.warn(f"{clamped} forecast member rates below 0 clamped to 0")
    rows.sort(key=lambda r: (r["method"], r["horizon"], r["year"], r["week"]))
    result = ExperimentResult(config=config, forecasts=rows)
    result.metrics = _summarize(rows)
    return result


def _kde_interval(kde: KdeForecast, coverage: float) -> tuple[float, float]:
    tail = (1 - coverage) / 2
    lo = kde.centers.min() - 10 * kde.bandwidth
    hi = kde.centers.max() + 10 * kde.bandwidth

    def quantile(q):
        a, b = lo, hi
        while b - a > 1e-10:
            mid = 0.5 * (a + b)
            if kde.cdf(mid) < q:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    return quantile(tail), quantile(1 - tail)


def _summarize(rows) -> list:
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["horizon"]), []).append(r)
    out = []
    for (method, h), rs in sorted(groups.items()):
        err = np.array([r["point"] - r["truth"] for r in rs])
        out.append({"method": method, "horizon": h,
                    "log_score": log_score([r["prob"] for r in rs]),
                    "mse": float(np.mean(err**2)), "n_weeks": len(rs)})
    return out


def rank_sweep(records, config: IliExperimentConfig = IliExperimentConfig(),
               ranks=range(4, 13), horizon: int = 4) -> list:
    """Log score and MSE of the ``horizon``-week forecast for each rank."""
    out = []
    for r in ranks:
        res = run_ili_experiment(records, replace(config, rank=int(r), horizons=(horizon,)))
        out.append({"rank": int(r), "horizon": horizon,
                    "log_score": res.metric("dmdenkf", horizon, "log_score"),
                    "mse": res.metric("dmdenkf", horizon, "mse")})
    return out
