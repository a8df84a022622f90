from datetime import date, datetime, time, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rampcast.features import (
    N_FEATURES,
    ScalerParams,
    SkipSample,
    WindowSpec,
    build_dataset,
    build_sample,
    encode_calendar,
    fit_scaler,
    fit_scalers,
    invert_target,
    load_samples,
    save_samples,
    split_sequential,
)
from rampcast.ramps import labels_by_date
from rampcast.timeseries import SeriesFrame


@pytest.fixture(scope="module")
def dataset(duck30, duck30_labels):
    return build_dataset(duck30, duck30_labels)


def test_scaler_midpoint_and_endpoints():
    s = fit_scaler("x", np.arange(11))
    assert (s.min, s.max) == (0.0, 10.0)
    assert s.transform(5) == 0.0
    assert s.transform(0) == -1.0
    assert s.transform(10) == 1.0


def test_degenerate_scaler():
    s = fit_scaler("x", [7, 7, 7])
    assert s.transform(123.0) == 0.0
    assert s.inverse(0.4) == 7.0


def test_scaler_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_scaler("x", [])
    with pytest.raises(ValueError, match="x"):
        fit_scaler("x", [1.0, np.inf])


def test_invert_target_examples():
    assert invert_target(0.0, ScalerParams("m", 0, 10)) == 5.0
    assert invert_target(-1.0, ScalerParams("m", 2, 8)) == 2.0


@settings(max_examples=300)
@given(
    st.floats(-1e6, 1e6),
    st.floats(1e-3, 1e6),
    st.floats(-1e6, 1e6),
)
def test_round_trip(lo, width, x):
    s = ScalerParams("x", lo, lo + width)
    back = s.inverse(s.transform(x))
    assert abs(back - x) <= 1e-9 * max(abs(x), abs(lo), abs(lo + width))
    y = x / 1e6  # scaled-space value
    assert abs(s.transform(s.inverse(y)) - y) <= 1e-9 * max(1.0, abs(y)) * max(1.0, abs(lo) / width)


def test_encode_calendar_examples():
    v = encode_calendar(0, 1)
    assert v.tolist() == [1, 0, 0, 0, 0, 0, 0] + [1] + [0] * 11
    v = encode_calendar(6, 12)
    assert v[6] == 1 and v[-1] == 1 and v.sum() == 2
    with pytest.raises(ValueError):
        encode_calendar(7, 1)
    with pytest.raises(ValueError):
        encode_calendar(0, 13)


@given(st.integers(0, 6), st.integers(1, 12))
def test_one_hot_blocks(dow, month):
    v = encode_calendar(dow, month)
    assert v[:7].sum() == 1 and v[7:].sum() == 1
    assert set(np.unique(v)) <= {0.0, 1.0}


def test_window_spec_length():
    assert WindowSpec().length == 96
    assert WindowSpec(time(18), time(20)).length == 24


def test_column_count():
    assert N_FEATURES == 4 + 4 + 5 + 7 + 12 == 32


def test_sample_shape_and_calendar(dataset):
    for s in dataset.train + dataset.val + dataset.test:
        X = s.window.X
        assert X.shape == (96, 32)
        assert np.all(X[:, 13:].sum(axis=1) == 2)
        assert np.all(X[:, 13:20] == X[0, 13:20])  # one day -> identical day-of-week rows
        assert s.window.first_timestamp == datetime.combine(s.date - timedelta(days=1), time(12))


def test_no_leakage(dataset):
    for s in dataset.train + dataset.val + dataset.test:
        assert s.window.last_timestamp < datetime.combine(s.date, time(0))
        assert s.window.last_timestamp.time() == time(19, 55)


def test_training_columns_in_unit_interval(dataset):
    X = np.stack([s.window.X for s in dataset.train])
    assert X[..., :13].min() >= -1.0 and X[..., :13].max() <= 1.0
    assert X[..., :13].min() == -1.0 and X[..., :13].max() == 1.0


def test_scalers_fit_on_train_only(duck30, duck30_labels, dataset):
    by_date = labels_by_date(duck30_labels)
    refit = fit_scalers(duck30, by_date, [s.date for s in dataset.train])
    assert refit == dataset.scalers
    mags = [s.target_magnitude_gw for s in dataset.train]
    assert dataset.scalers.magnitude.min == min(mags) and dataset.scalers.magnitude.max == max(mags)


def test_targets_scaled_and_raw(dataset, duck30_labels):
    by_date = labels_by_date(duck30_labels)
    for s in dataset.test:
        assert s.target_magnitude == by_date[s.date].magnitude_mw
        assert s.target_start == by_date[s.date].start_period
        assert s.scaled_magnitude == pytest.approx(dataset.scalers.magnitude.transform(s.target_magnitude / 1000))


def test_first_day_has_no_sample(duck30, duck30_labels, dataset):
    by_date = labels_by_date(duck30_labels)
    with pytest.raises(SkipSample):
        build_sample(duck30, by_date, dataset.scalers, date(2019, 1, 1))
    with pytest.raises(SkipSample, match="label"):
        build_sample(duck30, {}, dataset.scalers, date(2019, 1, 5))


def test_missing_history_skips(duck30, duck30_labels, dataset):
    values = np.array(duck30.values)
    values[288 * 3 + 150, 5] = np.nan  # 12:30 on Jan 4 -> window of Jan 5
    frame = SeriesFrame(duck30.index, values, ~np.isnan(values), duck30.imputed)
    with pytest.raises(SkipSample, match="missing"):
        build_sample(frame, labels_by_date(duck30_labels), dataset.scalers, date(2019, 1, 5))


def test_split_sizes():
    assert [len(p) for p in split_sequential(list(range(100)))] == [70, 15, 15]
    assert [len(p) for p in split_sequential(list(range(10)))] == [7, 1, 2]
    with pytest.raises(ValueError):
        split_sequential([1, 2])
    with pytest.raises(ValueError):
        split_sequential(list(range(10)), (0.5, 0.3, 0.3))


@given(st.integers(3, 2000))
def test_split_contiguous(n):
    train, val, test = split_sequential(list(range(n)))
    assert train + val + test == list(range(n))
    assert len(train) == int(np.floor(0.7 * n + 1e-9))


def test_dataset_partition_sizes(dataset):
    # 30 labelled days, the first has no previous-day history
    assert (len(dataset.train), len(dataset.val), len(dataset.test)) == (20, 4, 5)


def test_samples_round_trip(tmp_path, dataset):
    save_samples(dataset, tmp_path / "samples", config_hash="abc")
    back = load_samples(tmp_path / "samples")
    assert back.scalers == dataset.scalers
    for a, b in zip(dataset.train + dataset.val + dataset.test, back.train + back.val + back.test):
        assert a.date == b.date
        assert np.array_equal(a.window.X, b.window.X)
        assert (a.target_magnitude, a.target_start, a.scaled_start) == (b.target_magnitude, b.target_start, b.scaled_start)
