"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line before asserting."""

import time
from datetime import date, datetime, time as dtime, timedelta

import numpy as np
import pytest
import yaml

from oracles import finite_difference_grads, max_relative_error, metric_loop, ramp_by_enumeration
from rampcast.cli import main
from rampcast.config import RunConfig, SyntheticSource, TargetSettings
from rampcast.evaluation import FIELDS, METRICS, MODELS, STATS, ForecastRecord, dump_metrics, metrics, npm_forecast, parse_metrics
from rampcast.features import FeatureWindow, Sample, ScalerParams, build_dataset, make_window
from rampcast.neural import NetworkSpec, backward, forward, init_params
from rampcast.ramps import RampLabel, build_label_set, extract_ramp, labels_by_date
from rampcast.timeseries import synth_duck
from rampcast.training import TrainConfig, TrainedModel, predict_magnitude, predict_start, train

KINDS = ("lstm", "gru", "srn")


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return _report


def rel_close(a, b, rtol=1e-12):
    return abs(a - b) <= rtol * max(abs(a), abs(b)) or a == b


def test_c01_ramp_oracle(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        x = rng.normal(20000, 4000, 288) + 3000 * np.sin(np.linspace(0, 2 * np.pi, 288) + rng.uniform(0, 6))
        lab = extract_ramp(x, date(2020, 1, 1))
        mismatches += (lab.magnitude_mw, lab.start_period) != ramp_by_enumeration(x)
    elapsed = time.perf_counter() - t0
    report(1, mismatches == 0 and elapsed < 5, f"{mismatches} mismatches over 1000 days in {elapsed:.2f} s (limit 5 s)")


def test_c02_gradient_fidelity(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, runs = 0.0, 0
    for restart in range(8):
        for kind in KINDS:
            hidden = tuple(int(h) for h in rng.integers(2, 5, size=rng.integers(1, 3)))
            model = init_params(NetworkSpec.stacked(kind, hidden, input_size=2, seq_len=3), int(rng.integers(1 << 30)))
            for cell in model.cells:
                cell.b[...] = rng.normal(0, 0.5, cell.b.shape)
            model.head_b[...] = rng.normal()
            X = rng.normal(size=(2, 3, 2))
            w = rng.normal(size=2)
            _, tape = forward(model, X)
            analytic = backward(model, tape, w)
            numeric = finite_difference_grads(lambda: float(forward(model, X)[0] @ w), model.params(), eps=1e-5)
            worst = max(worst, max_relative_error(analytic, numeric))
            runs += 1
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-4 and runs >= 20 and elapsed < 60, f"max relative error {worst:.2e} over {runs} restarts (limit 1e-4) in {elapsed:.1f} s")


@pytest.mark.parametrize("kind", KINDS)
def test_c03_overfit(kind, report):
    X = np.random.default_rng(3).normal(size=(8, 4))
    day = date(2020, 1, 2)
    s = Sample(FeatureWindow(day, X, datetime.combine(day - timedelta(1), dtime(12))), 500.0, 0, 0.5, 0.5)
    cfg = TrainConfig("magnitude", NetworkSpec.stacked(kind, (8,), input_size=4, seq_len=8), 1e-2, epochs=500, patience=500, seed=3)
    t0 = time.perf_counter()
    tm = train(cfg, [s], [s])
    elapsed = time.perf_counter() - t0
    losses = [r.train_loss for r in tm.history]
    hit = next((k + 1 for k, v in enumerate(losses) if v < 1e-3), None)
    report(3, hit is not None and elapsed < 120, f"{kind}: loss < 1e-3 at epoch {hit} of 500, {elapsed:.1f} s (limit 120 s)")


def test_c04_npm_exactness(report):
    rng = np.random.default_rng(4)
    worst_ok, stable = True, True
    for _ in range(50):
        n = int(rng.integers(3, 80))
        d0 = date(2019, 1, 1) + timedelta(int(rng.integers(0, 400)))
        labels = {d0 + timedelta(k): RampLabel(d0 + timedelta(k), float(rng.uniform(500, 15000)), int(rng.integers(0, 253))) for k in range(n)}
        recs = []
        for day in sorted(labels)[1:]:
            mag, start = npm_forecast(labels, day)
            recs.append(ForecastRecord(day, "NPM", mag, labels[day].magnitude_gw, start, labels[day].start_period))
        for fld in FIELDS:
            got, _ = metrics(recs, fld)
            again, _ = metrics(list(recs), fld)
            stable &= got == again
            actual = [r.pair(fld)[0] for r in recs]
            pred = [r.pair(fld)[1] for r in recs]
            want = metric_loop(actual, pred, start_time=fld == "start_time")
            for k in METRICS:
                worst_ok &= rel_close(got[k]["mean"], want[k][0]) and rel_close(got[k]["std"], want[k][1])
    report(4, worst_ok and stable, f"NPM tables match the loop oracle (1e-12 rel) on 50 label sets; repeat runs identical: {stable}")


def test_c05_metric_oracle(report):
    rng = np.random.default_rng(5)
    bad = 0
    for k in range(1000):
        n = int(rng.integers(1, 60))
        fld = FIELDS[k % 2]
        if fld == "magnitude":
            a, p = rng.uniform(0.5, 15, n), rng.uniform(0, 16, n)
        else:
            a, p = rng.integers(0, 253, n), rng.integers(0, 253, n)
        recs = [
            ForecastRecord(date(2020, 1, 1) + timedelta(j), "PM", float(p[j]), float(a[j]), int(p[j]), int(a[j]))
            if fld == "start_time"
            else ForecastRecord(date(2020, 1, 1) + timedelta(j), "PM", float(p[j]), float(a[j]), 0, 0)
            for j in range(n)
        ]
        got, _ = metrics(recs, fld)
        want = metric_loop(list(map(float, a)), list(map(float, p)), start_time=fld == "start_time")
        for m in METRICS:
            bad += not rel_close(got[m]["mean"], want[m][0])
            bad += not rel_close(got[m]["std"], want[m][1])
    report(5, bad == 0, f"{bad} disagreements with the loop oracle over 1000 random record sets")


@pytest.mark.slow
def test_c06_synthetic_benchmark(report):
    t0 = time.perf_counter()
    cfg = RunConfig(seed=7, synthetic=SyntheticSource(7, 365), magnitude=TargetSettings(hidden=(32, 64, 16)))
    frame = synth_duck(7, 365)
    labels = build_label_set(frame)
    ds = build_dataset(frame, labels, cfg.window, cfg.split, cfg.scale_targets)
    tm = train(cfg.train_config("PM", "magnitude"), ds.train, ds.val, ds.scalers)
    by_date = labels_by_date(labels)
    lstm, npm = [], []
    for s in ds.test:
        lstm.append(abs(predict_magnitude(tm, s.window) - s.target_magnitude_gw))
        npm.append(abs(npm_forecast(by_date, s.date)[0] - s.target_magnitude_gw))
    ratio = float(np.mean(lstm) / np.mean(npm))
    elapsed = time.perf_counter() - t0
    report(
        6,
        ratio <= 0.9 and elapsed < 900,
        f"LSTM MAE {np.mean(lstm):.4f} GW vs NPM {np.mean(npm):.4f} GW, ratio {ratio:.3f} (limit 0.9), {len(ds.test)} test days, {elapsed:.0f} s",
    )


def _run_pipeline(tmp_path, name):
    doc = {
        "seed": 11,
        "synthetic": {"seed": 7, "days": 60},
        "magnitude": {"hidden": [6, 4], "dropout": [0.1, 0.2], "learning_rate": 0.01, "epochs": 6},
        "start_time": {"hidden": [5], "dropout": [0.1], "learning_rate": 0.01, "epochs": 6},
    }
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    out = tmp_path / name
    for cmd in (["ingest"], ["label"], ["train", "--cell", "all"], ["evaluate"]):
        assert main(cmd + ["--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("det")
    return _run_pipeline(tmp, "a"), _run_pipeline(tmp, "b")


@pytest.mark.slow
def test_c07_determinism(two_runs, report):
    a, b = two_runs
    files = sorted(p.relative_to(a) for p in (a / "checkpoints").glob("*.json"))
    files += [p.relative_to(a) for p in (a / "report" / "metrics.json", a / "report" / "manifest.json", a / "samples" / "manifest.json")]
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    report(7, not differ and len(files) == 9, f"{len(files) - len(differ)}/{len(files)} checkpoint/metrics/manifest files byte-identical {differ or ''}")


def test_c08_latency(report):
    frame = synth_duck(7, 3)
    scalers = build_dataset(synth_duck(7, 30), build_label_set(synth_duck(7, 30))).scalers
    window = make_window(frame, scalers, date(2019, 1, 3))
    cfg = RunConfig(synthetic=SyntheticSource())
    timings = {}
    for target in ("magnitude", "start_time"):
        tc = cfg.train_config("PM", target)
        tm = TrainedModel(init_params(tc.network, 0), scalers, tc, [], 0)
        predict = predict_magnitude if target == "magnitude" else predict_start
        predict(tm, window)  # warm-up
        runs = []
        for _ in range(5):
            t0 = time.perf_counter()
            predict(tm, window)
            runs.append((time.perf_counter() - t0) * 1000)
        timings[target] = float(np.median(runs))
    ok = all(v < 50 for v in timings.values())
    report(8, ok, "median single-day latency: " + ", ".join(f"{k} {v:.1f} ms" for k, v in timings.items()) + " (limit 50 ms each)")


def test_c09_scaler_and_encoding(report):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(10_000):
        lo, width = rng.uniform(-1e5, 1e5), 10 ** rng.uniform(-2, 5)
        s = ScalerParams("x", lo, lo + width)
        x = rng.uniform(lo - width, lo + 2 * width)
        worst = max(worst, abs(s.inverse(s.transform(x)) - x) / max(abs(x), abs(lo), abs(lo + width)))
    frame = synth_duck(7, 120)
    ds = build_dataset(frame, build_label_set(frame))
    samples = ds.train + ds.val + ds.test
    shapes = all(s.window.X.shape == (96, 32) for s in samples)
    one_hot = all(np.all(s.window.X[:, 13:].sum(axis=1) == 2) for s in samples)
    leak_free = all(s.window.last_timestamp < datetime.combine(s.date, dtime(0)) for s in samples)
    ok = worst <= 1e-9 and shapes and one_hot and leak_free
    report(
        9,
        ok,
        f"round-trip rel error {worst:.1e} (limit 1e-9); {len(samples)} windows: shape 96x32 {shapes}, one-hot sums 2 {one_hot}, no leakage {leak_free}",
    )


@pytest.mark.slow
def test_c10_table_structure(two_runs, report):
    a, _ = two_runs
    text = (a / "report" / "metrics.json").read_text()
    tables = parse_metrics(text)
    shape_ok = all(
        tables[f].models == list(MODELS)
        and all(set(tables[f].entries[m]) == set(METRICS) and all(set(tables[f].entries[m][k]) == set(STATS) for k in METRICS) for m in MODELS)
        for f in FIELDS
    )
    stable = dump_metrics(tables) == text and dump_metrics(parse_metrics(dump_metrics(tables))) == text
    layout = (a / "report" / "tables.txt").read_text()
    report(10, shape_ok and stable and "start-time" in layout, f"4 models x 3 metrics x (mean, std) for {len(tables)} fields; parse round trip stable {stable}")
