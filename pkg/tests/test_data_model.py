import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nml.data_model import (AlignRule, SeriesError, TransformKind, WeeklySeries, align_weekly, describe,
                            describe_values, pearson_corr, read_csv_columns, transform, week_ending_friday,
                            write_frame_csv)

FRI = np.datetime64("2024-01-05")


def weekly(values, name="x", start=FRI):
    values = np.asarray(values, dtype=float)
    dates = start + 7 * np.arange(len(values)).astype("timedelta64[D]")
    return WeeklySeries(name, dates, values)


def test_week_ending_friday():
    d = np.array(["2024-01-06", "2024-01-08", "2024-01-12", "2024-01-13"], dtype="datetime64[D]")
    assert week_ending_friday(d).astype(str).tolist() == ["2024-01-12", "2024-01-12", "2024-01-12", "2024-01-19"]


def test_series_rejects_gaps_and_non_fridays():
    with pytest.raises(SeriesError):
        WeeklySeries("x", np.array(["2024-01-05", "2024-01-19"], dtype="datetime64[D]"), [1.0, 2.0])
    with pytest.raises(SeriesError):
        WeeklySeries("x", np.array(["2024-01-04"], dtype="datetime64[D]"), [1.0])
    with pytest.raises(SeriesError):
        WeeklySeries("", np.array(["2024-01-05"], dtype="datetime64[D]"), [1.0])


def test_series_values_are_read_only():
    s = weekly([1.0, 2.0])
    with pytest.raises(ValueError):
        s.values[0] = 3.0


def test_align_constant_last_value():
    days = np.arange(np.datetime64("2024-01-01"), np.datetime64("2024-01-20"))
    s = align_weekly(days, np.full(len(days), 5.0), "LastValue")
    assert s.values.tolist() == [5.0, 5.0, 5.0]


def test_align_week_mean_of_weekdays():
    days = np.arange(np.datetime64("2024-01-08"), np.datetime64("2024-01-13"))  # Mon..Fri
    s = align_weekly(days, [1, 2, 3, 4, 5], AlignRule.WEEK_MEAN)
    assert s.dates.astype(str).tolist() == ["2024-01-12"]
    assert s.values[0] == 3.0


def test_align_last_value_takes_friday():
    days = np.arange(np.datetime64("2024-01-08"), np.datetime64("2024-01-13"))
    s = align_weekly(days, [1, 2, 3, 4, 7.0], "LastValue")
    assert s.values[0] == 7.0


def test_align_flags_empty_weeks_missing():
    d = np.array(["2024-01-05", "2024-01-19"], dtype="datetime64[D]")
    s = align_weekly(d, [1.0, 2.0])
    assert s.missing.tolist() == [False, True, False]
    assert np.isnan(s.values[1])


def test_align_errors():
    with pytest.raises(SeriesError):
        align_weekly([], [])
    with pytest.raises(SeriesError):
        align_weekly(np.array(["2024-01-05", "2024-01-01"], dtype="datetime64[D]"), [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.floats(-1e3, 1e3)), min_size=1, max_size=80), st.randoms())
def test_align_grid_independent_of_arrival_order(obs, rnd):
    # observations arriving in any order, then sorted by date, give the same grid and weekly means
    base = np.datetime64("2024-01-01")
    shuffled = list(obs)
    rnd.shuffle(shuffled)
    out = []
    for seq in (obs, shuffled):
        seq = sorted(seq, key=lambda t: t[0])
        d = base + np.array([t[0] for t in seq]).astype("timedelta64[D]")
        out.append(align_weekly(d, [t[1] for t in seq], "WeekMean"))
    assert np.array_equal(out[0].dates, out[1].dates)
    assert np.array_equal(out[0].missing, out[1].missing)
    np.testing.assert_allclose(out[0].values, out[1].values, rtol=1e-12, atol=1e-9)


def test_transform_examples():
    assert transform(weekly([100, 100 * math.e]), "LogReturn").values[0] == pytest.approx(1.0, abs=1e-15)
    assert transform(weekly([100, 110]), "GrowthRate").values[0] == pytest.approx(0.10, abs=1e-15)
    s = transform(weekly([3, 3, 3, 3]), "Diff2")
    assert s.values.tolist() == [0.0, 0.0]
    assert len(s.dates) == 2


def test_transform_log_rejects_nonpositive_with_date():
    s = weekly([1.0, 2.0, -1.0])
    with pytest.raises(SeriesError, match="2024-01-19"):
        transform(s, TransformKind.LOG_RETURN)


def test_transform_missing_propagates():
    s = weekly([1.0, np.nan, 2.0, 4.0])
    out = transform(s, "LogDiff")
    assert out.missing.tolist() == [True, True, False]


@given(arrays(float, st.integers(1, 40), elements=st.floats(-1e6, 1e6)))
def test_level_is_identity(v):
    s = weekly(v)
    out = transform(s, "Level")
    assert np.array_equal(out.values, s.values) and np.array_equal(out.dates, s.dates)


@given(arrays(float, st.integers(2, 60), elements=st.floats(1e-3, 1e6)))
def test_log_return_cumsum_reconstructs_ratio(v):
    r = transform(weekly(v), "LogReturn").values
    np.testing.assert_allclose(np.exp(np.cumsum(r)), v[1:] / v[0], rtol=1e-12)


def test_describe_degenerate_and_hand_examples():
    d = describe(weekly([1, 1, 1]))
    assert (d.mean, d.sd, d.skewness, d.kurtosis) == (1.0, 0.0, 0.0, 0.0)
    d = describe(weekly([1, 2, 3, 4]))
    assert d.mean == 2.5 and d.median == 2.5
    assert d.sd == pytest.approx(math.sqrt(1.25), abs=1e-15)
    assert d.n == 4


def test_describe_gaussian_kurtosis_is_non_excess():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(describe_values(x).kurtosis - 3.0) < 0.1


def test_describe_matches_scipy_moments():
    from scipy import stats
    x = np.random.default_rng(1).gamma(2.0, size=300)
    d = describe_values(x)
    assert d.skewness == pytest.approx(stats.skew(x), rel=1e-10)
    assert d.kurtosis == pytest.approx(stats.kurtosis(x, fisher=False), rel=1e-10)
    assert d.p5 == pytest.approx(np.percentile(x, 5), rel=1e-12)


def test_describe_all_missing_errors():
    with pytest.raises(SeriesError):
        describe(weekly([np.nan, np.nan]))


@given(arrays(float, st.integers(1, 50), elements=st.floats(-1e9, 1e9)))
def test_describe_percentiles_monotone(v):
    d = describe_values(v)
    q = [d.min, d.p5, d.p25, d.median, d.p75, d.p95, d.max]
    assert all(a <= b for a, b in zip(q, q[1:]))
    assert d.sd >= 0 and d.n == len(v)


def test_pearson_examples():
    x = weekly([1.0, 5.0, 2.0, 8.0])
    assert pearson_corr(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pearson_corr(x, weekly(-x.values)) == pytest.approx(-1.0, abs=1e-15)
    # closed form: sum dx*dy = 5, |dx| = sqrt(2), |dy| = sqrt(114)/3
    assert pearson_corr(weekly([1, 2, 3]), weekly([2, 4, 7])) == pytest.approx(15 / math.sqrt(228), abs=1e-14)


def test_pearson_uses_date_intersection():
    a = weekly([1.0, 2.0, 3.0, 4.0, 100.0])
    b = weekly([2.0, 4.0, 6.0, 8.0], start=FRI)
    assert pearson_corr(a, b) == pytest.approx(1.0)


def test_pearson_errors():
    with pytest.raises(SeriesError):
        pearson_corr(weekly([1, 1, 1]), weekly([1, 2, 3]))
    with pytest.raises(SeriesError):
        pearson_corr(weekly([1, 2]), weekly([1, 2]))


@settings(max_examples=60)
@given(arrays(float, 12, elements=st.floats(-100, 100)), arrays(float, 12, elements=st.floats(-100, 100)),
       st.floats(0.1, 50), st.floats(-100, 100), st.floats(0.1, 50), st.floats(-100, 100))
def test_pearson_symmetric_and_affine_invariant(x, y, a, b, c, d):
    from hypothesis import assume
    assume(np.std(x) > 1e-3 and np.std(y) > 1e-3)
    r = pearson_corr(weekly(x), weekly(y))
    assert pearson_corr(weekly(y), weekly(x)) == pytest.approx(r, abs=1e-10)
    assert pearson_corr(weekly(a * x + b), weekly(c * y + d)) == pytest.approx(r, abs=1e-10)


def test_csv_round_trip(tmp_path):
    s = weekly([1.5, np.nan, 0.1 + 0.2])
    write_frame_csv(tmp_path / "f.csv", s.dates, {"x": s.values})
    dates, cols = read_csv_columns(tmp_path / "f.csv")
    assert np.array_equal(dates, s.dates)
    assert np.isnan(cols["x"][1]) and cols["x"][2] == 0.1 + 0.2
