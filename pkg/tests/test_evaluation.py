import csv
import json
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import metric_loop
from rampcast.evaluation import (
    METRICS,
    MODELS,
    STATS,
    EvaluationError,
    ForecastRecord,
    build_tables,
    dump_metrics,
    emit_report,
    error_terms,
    evaluate,
    format_table,
    metrics,
    npm_forecast,
    parse_metrics,
)
from rampcast.features import build_dataset
from rampcast.neural import NetworkSpec
from rampcast.ramps import RampLabel, labels_by_date
from rampcast.training import TrainConfig, train

D0 = date(2020, 3, 1)


def records(actual, predicted, field="magnitude", model="PM"):
    out = []
    for k, (a, p) in enumerate(zip(actual, predicted)):
        day = D0 + timedelta(days=k)
        if field == "magnitude":
            out.append(ForecastRecord(day, model, p, a, 0, 0))
        else:
            out.append(ForecastRecord(day, model, 0.0, 1.0, int(p), int(a)))
    return out


def test_npm_examples():
    labels = {D0: RampLabel(D0, 5200.0, 190), D0 + timedelta(1): RampLabel(D0 + timedelta(1), 4100.0, 185)}
    assert npm_forecast(labels, D0 + timedelta(1)) == (5.2, 190)
    assert npm_forecast(labels, D0 + timedelta(2)) == (4.1, 185)
    with pytest.raises(EvaluationError):
        npm_forecast(labels, D0)


def test_metric_example():
    m, excluded = metrics(records([2.0, 4.0], [1.0, 5.0]), "magnitude")
    assert m["MAE"] == {"mean": 1.0, "std": 0.0}
    assert m["MSE"]["mean"] == 1.0
    assert m["MAPE"]["mean"] == 37.5
    assert m["MAPE"]["std"] == 12.5
    assert excluded == 0


def test_start_time_mape_is_one_based():
    terms = error_terms([0, 99], [1, 100], "start_time")
    assert terms["MAPE"].tolist() == [100.0, 1.0]


def test_zero_actual_excluded_from_mape():
    m, excluded = metrics(records([0.0, 2.0], [1.0, 1.0]), "magnitude")
    assert excluded == 1
    assert m["MAPE"] == {"mean": 50.0, "std": 0.0}
    assert m["MAE"]["mean"] == 1.0


def test_perfect_forecast():
    m, _ = metrics(records([1.5, 2.5, 3.5], [1.5, 2.5, 3.5]), "magnitude")
    assert all(m[k][s] == 0.0 for k in METRICS for s in STATS)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0.1, 20), st.floats(0, 25)), min_size=1, max_size=60),
)
def test_magnitude_metrics_match_loop(pairs):
    a, p = zip(*pairs)
    got, _ = metrics(records(a, p), "magnitude")
    want = metric_loop(a, p)
    for k in METRICS:
        assert got[k]["mean"] == pytest.approx(want[k][0], rel=1e-12, abs=1e-12)
        assert got[k]["std"] == pytest.approx(want[k][1], rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 252), st.integers(0, 252)), min_size=1, max_size=60))
def test_start_metrics_match_loop(pairs):
    a, p = zip(*pairs)
    got, _ = metrics(records(a, p, "start_time"), "start_time")
    want = metric_loop(a, p, start_time=True)
    for k in METRICS:
        assert got[k]["mean"] == pytest.approx(want[k][0], rel=1e-12, abs=1e-12)
        assert got[k]["std"] == pytest.approx(want[k][1], rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_mse_mean_is_mean_square_of_abs_error(errs):
    t = error_terms(np.zeros(len(errs)), errs, "magnitude")
    assert np.array_equal(t["MSE"], t["MAE"] ** 2)


def test_empty_records():
    with pytest.raises(EvaluationError):
        metrics([], "magnitude")


def test_table_shape_and_parse_round_trip():
    rng = np.random.default_rng(0)
    recs = []
    for m in MODELS:
        recs += records(rng.uniform(1, 9, 8), rng.uniform(1, 9, 8), model=m)
    tables = build_tables(recs)
    for fld, table in tables.items():
        assert table.models == list(MODELS)
        assert all(set(table.entries[m]) == set(METRICS) for m in MODELS)
        assert all(set(table.entries[m][k]) == set(STATS) for m in MODELS for k in METRICS)
    text = dump_metrics(tables)
    back = parse_metrics(text)
    assert dump_metrics(back) == text
    for fld in tables:
        assert back[fld].entries == tables[fld].entries


def test_format_table_layout():
    recs = []
    for m in MODELS:
        recs += records([1.0, 2.0], [1.5, 2.5], model=m)
    text = format_table(build_tables(recs)["magnitude"])
    lines = text.splitlines()
    assert "GW" in lines[0]
    assert len(lines) == 2 + len(METRICS) * len(STATS)
    assert all(m in lines[1] for m in MODELS)


@pytest.fixture(scope="module")
def small_eval(duck30, duck30_labels):
    ds = build_dataset(duck30, duck30_labels)
    fp = ds.fingerprint()

    def fit(kind, target):
        cfg = TrainConfig(target, NetworkSpec.stacked(kind, (3,)), 1e-2, epochs=2, seed=5)
        return train(cfg, ds.train, ds.val, ds.scalers, data_fingerprint=fp)

    models = {name: (fit(kind, "magnitude"), fit(kind, "start_time")) for name, kind in (("PM", "lstm"), ("GRU", "gru"), ("SRN", "srn"))}
    return ds, models, evaluate(models, ds.test, labels_by_date(duck30_labels))


def test_evaluate_records(small_eval):
    ds, _, result = small_eval
    assert len(result.records) == len(ds.test) * 4
    assert {r.model for r in result.records} == set(MODELS)
    assert all(0 <= r.pred_start <= 252 for r in result.records)


def test_npm_self_consistency(small_eval, duck30_labels):
    _, _, result = small_eval
    by_date = labels_by_date(duck30_labels)
    for r in result.records:
        if r.model == "NPM":
            prev = by_date[r.date - timedelta(1)]
            assert (r.pred_mag_gw, r.pred_start) == (prev.magnitude_mw / 1000, prev.start_period)


def test_evaluate_drops_days_without_npm(small_eval, duck30_labels):
    ds, models, _ = small_eval
    labels = labels_by_date(duck30_labels)
    del labels[ds.test[0].date - timedelta(1)]
    result = evaluate(models, ds.test, labels)
    assert result.skipped_days == [ds.test[0].date.isoformat()]
    assert len(result.records) == (len(ds.test) - 1) * 4


def test_evaluate_rejects_mixed_fingerprints(small_eval, duck30_labels):
    ds, models, _ = small_eval
    mag, start = models["PM"]
    start.data_fingerprint, old = "other", start.data_fingerprint
    try:
        with pytest.raises(EvaluationError, match="different"):
            evaluate({"PM": (mag, start)}, ds.test, labels_by_date(duck30_labels))
    finally:
        start.data_fingerprint = old


def test_report_files(small_eval, tmp_path):
    ds, _, result = small_eval
    manifest = {"split": ds.boundaries}
    paths = emit_report(result, tmp_path / "a", manifest)
    again = emit_report(result, tmp_path / "b", manifest)
    for key in paths:
        assert paths[key].read_bytes() == again[key].read_bytes()
    with paths["forecasts"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(ds.test) * 4
    doc = json.loads(paths["manifest"].read_text())
    assert doc["split"]["test"][0] == ds.test[0].date.isoformat()
    assert parse_metrics(paths["metrics"].read_text())["start_time"].models == list(MODELS)
