import datetime as dt
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmdenkf.ili import (
    AGE_GROUPS,
    REGIONS,
    CensusShares,
    IliDataError,
    IliExperimentConfig,
    IliWeekRecord,
    PopulationShare,
    allocate_age_totals,
    inverse_transform,
    load_census_csv,
    load_ili_csv,
    make_ili_fixture,
    rank_sweep,
    rate_matrix,
    run_ili_experiment,
    stratum_records,
    transform,
    write_ili_csv,
)
from oracles import best_integer_split

HEADER = "year,week,region,age_group,ili,total_patients\n"


def full_week(year, week, ili=5.0, total=100.0):
    return [IliWeekRecord(year, week, g, a, ili, total) for g in REGIONS for a in AGE_GROUPS]


def write_rows(tmp_path, rows, name="ili.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "".join(r + "\n" for r in rows))
    return path


# --- records and loading ------------------------------------------------------------

def test_record_rate_and_stratum():
    rec = IliWeekRecord(2015, 3, 4, "25-64", 3.0, 150.0)
    assert rec.rate == pytest.approx(2.0)
    assert rec.stratum == 4 * 3 + 2


def test_record_validation():
    with pytest.raises(IliDataError):
        IliWeekRecord(2015, 3, 11, "0-4", 1.0, 10.0)
    with pytest.raises(IliDataError):
        IliWeekRecord(2015, 3, 1, "25-24", 1.0, 10.0)
    with pytest.raises(IliDataError):
        IliWeekRecord(2015, 3, 1, "0-4", 11.0, 10.0)


def test_two_week_fixture_loads_80_records(tmp_path):
    path = tmp_path / "two.csv"
    write_ili_csv(path, full_week(2015, 1) + full_week(2015, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        recs = load_ili_csv(path)
    assert len(recs) == 80


def test_negative_count_reports_line(tmp_path):
    path = write_rows(tmp_path, ["2015,1,1,0-4,3,100", "2015,1,1,5-24,-2,100"])
    with pytest.raises(IliDataError, match="line 3"):
        load_ili_csv(path)


def test_malformed_row_reports_line(tmp_path):
    path = write_rows(tmp_path, ["2015,1,1,0-4,3,100", "2015,1,1,5-24,abc,100"])
    with pytest.raises(IliDataError, match="line 3"):
        load_ili_csv(path)


def test_duplicate_names_key(tmp_path):
    path = write_rows(tmp_path, ["2015,1,1,0-4,3,100", "2015,1,1,0-4,4,100"])
    with pytest.raises(IliDataError, match=r"duplicate.*\(2015, 1, 1, '0-4'\)"):
        load_ili_csv(path)


def test_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("year,week,region\n")
    with pytest.raises(IliDataError, match="header"):
        load_ili_csv(path)


def test_partial_week_warns(tmp_path):
    path = tmp_path / "partial.csv"
    write_ili_csv(path, full_week(2015, 1) + full_week(2015, 2)[:-1])
    with pytest.warns(UserWarning, match="2015-W02: 1 missing"):
        load_ili_csv(path)


def test_rate_matrix_forward_fills():
    recs = full_week(2015, 1, ili=5.0) + full_week(2015, 2, ili=7.0)[:-1]
    with pytest.warns(UserWarning, match="forward-filling 1"):
        weeks, rates, _ = rate_matrix(recs)
    assert weeks == [(2015, 1), (2015, 2)]
    assert rates[1, -1] == pytest.approx(5.0)
    assert rates[1, 0] == pytest.approx(7.0)


# --- census and allocation ---------------------------------------------------------

def anchors():
    return CensusShares(
        [PopulationShare(dt.date(2010, 1, 1), a, s) for a, s in zip(AGE_GROUPS, (0.1, 0.3, 0.4, 0.2))]
        + [PopulationShare(dt.date(2020, 1, 1), a, s) for a, s in zip(AGE_GROUPS, (0.2, 0.2, 0.4, 0.2))]
    )


def test_equal_split():
    np.testing.assert_array_equal(allocate_age_totals(1000, [0.25] * 4), [250] * 4)


def test_midpoint_interpolation():
    c = anchors()
    mid = dt.date.fromordinal((dt.date(2010, 1, 1).toordinal() + dt.date(2020, 1, 1).toordinal()) // 2)
    np.testing.assert_allclose(c.at(mid), [0.15, 0.25, 0.4, 0.2], atol=1e-4)
    with pytest.raises(IliDataError):
        c.at(dt.date(2021, 1, 1))


def test_rounding_case():
    out = allocate_age_totals(10, [0.33, 0.33, 0.34, 0.0])
    assert out.sum() == 10
    np.testing.assert_array_equal(out, [3, 3, 4, 0])


@given(st.integers(0, 12), st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 0.1))
def test_allocation_conserves_and_is_closest(total, raw):
    shares = np.array(raw) / np.sum(raw)
    shares[-1] = 1.0 - shares[:-1].sum()
    if shares[-1] < 0:
        return
    out = allocate_age_totals(total, shares)
    assert out.sum() == total
    best = best_integer_split(total, shares)
    target = total * shares
    assert np.abs(out - target).sum() <= np.abs(best - target).sum() + 1e-9


def test_allocation_rows_conserve():
    totals = np.array([[13, 1001], [7, 0]])
    out = allocate_age_totals(totals, [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(out.sum(axis=-1), totals)


def test_census_csv(tmp_path):
    path = tmp_path / "census.csv"
    lines = ["date,age_group,share"] + [f"2010-01-01,{a},0.25" for a in AGE_GROUPS] + \
            [f"2012-01-01,{a},{s}" for a, s in zip(AGE_GROUPS, (0.1, 0.2, 0.3, 0.4))]
    path.write_text("\n".join(lines) + "\n")
    c = load_census_csv(path)
    np.testing.assert_allclose(c.at(dt.date(2010, 1, 1)), 0.25)
    recs = stratum_records(2011, 1, 3, [1, 2, 3, 4], 1000, c)
    assert sum(r.total_patients for r in recs) == 1000
    assert [r.age_group for r in recs] == list(AGE_GROUPS)


def test_census_rejects_bad_sum():
    with pytest.raises(IliDataError):
        CensusShares([PopulationShare(dt.date(2010, 1, 1), a, 0.3) for a in AGE_GROUPS])


# --- transform -----------------------------------------------------------------------

def test_transform_examples():
    assert transform(0.0) == 0.0
    assert transform(np.e - 1) == pytest.approx(1.0)
    with pytest.raises(IliDataError):
        transform([-0.1])


def test_transform_round_trip():
    r = np.random.default_rng(0).uniform(0, 20, (30, 40))
    np.testing.assert_allclose(inverse_transform(transform(r)), r, atol=1e-12, rtol=1e-12)


def test_inverse_clamps_with_warning():
    with pytest.warns(UserWarning, match="clamped"):
        out = inverse_transform([-1.0, 0.5])
    assert out[0] == 0.0


# --- experiment -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fixture_result():
    recs = make_ili_fixture(seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return recs, run_ili_experiment(recs, IliExperimentConfig(seed=0))


def test_experiment_metric_rows(fixture_result):
    _, res = fixture_result
    for method in ("dmdenkf", "baseline"):
        for h in (1, 2, 3, 4):
            assert 0 < res.metric(method, h, "log_score") <= 1
            assert res.metric(method, h, "mse") >= 0


def test_experiment_scores_only_in_season(fixture_result):
    _, res = fixture_result
    for row in res.forecasts:
        assert row["week"] >= 40 or row["week"] <= 20
        assert (row["year"], row["week"]) >= (2012, 40)


def test_experiment_deterministic(fixture_result, tmp_path):
    recs, res = fixture_result
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = run_ili_experiment(recs, IliExperimentConfig(seed=0))
    res.write_metrics_json(tmp_path / "a.json")
    again.write_metrics_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["config"]["rank"] == 8


def test_forecast_intervals_bracket_points(fixture_result):
    _, res = fixture_result
    for row in res.forecasts:
        assert row["lower"] <= row["point"] + 1e-9 or row["method"] == "baseline"
        assert row["lower"] <= row["upper"]


def test_horizon_mse_increases_on_fixture():
    ok = 0
    for seed in range(5):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_ili_experiment(make_ili_fixture(seed=seed), IliExperimentConfig(seed=seed))
        mse = [res.metric("dmdenkf", h, "mse") for h in (1, 2, 3, 4)]
        ok += bool(np.all(np.diff(mse) > 0))
    assert ok == 5


def test_rank_sweep_rows():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = rank_sweep(make_ili_fixture(seed=1), IliExperimentConfig(seed=1), ranks=(4, 6))
    assert [r["rank"] for r in rows] == [4, 6]
    assert all(r["horizon"] == 4 for r in rows)


def test_config_round_trip_and_unknown_keys():
    cfg = IliExperimentConfig(rank=6, horizons=[1, 2], eval_seasons=[2013])
    assert IliExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        IliExperimentConfig.from_dict({"rnak": 3})


def test_too_little_data_before_split():
    recs = [r for y in (2012, 2013) for w in range(1, 5) for r in full_week(y, w)]
    with pytest.raises(IliDataError):
        run_ili_experiment(recs, IliExperimentConfig(split_year=2011))
