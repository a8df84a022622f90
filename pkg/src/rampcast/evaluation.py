"""Benchmarks, forecast-error metrics and the model-comparison report."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import Sample
from .ramps import RampLabel, previous_day
from .training import TrainedModel, predict_magnitude, predict_start_detail

logger = logging.getLogger(__name__)

MODELS = ("PM", "GRU", "SRN", "NPM")
METRICS = ("MSE", "MAE", "MAPE")
STATS = ("mean", "std")
FIELDS = ("magnitude", "start_time")
UNITS = {"magnitude": "GW", "start_time": "5-minute periods"}


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ForecastRecord:
    date: date
    model: str
    pred_mag_gw: float
    act_mag_gw: float
    pred_start: int
    act_start: int
    clamped: bool = False

    def pair(self, fld: str) -> tuple[float, float]:
        """(actual, predicted) for ``magnitude`` or ``start_time``."""
        if fld == "magnitude":
            return self.act_mag_gw, self.pred_mag_gw
        return float(self.act_start), float(self.pred_start)


@dataclass
class MetricTable:
    """``entries[model][metric][stat]`` for one forecast field."""

    field: str
    entries: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    mape_excluded: dict[str, int] = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return list(self.entries)

    def value(self, model: str, metric: str, stat: str) -> float:
        return self.entries[model][metric][stat]

    def to_dict(self) -> dict:
        return {"units": UNITS[self.field], "mape_excluded": dict(self.mape_excluded), "models": self.entries}

    @classmethod
    def from_dict(cls, fld: str, d: Mapping) -> "MetricTable":
        entries = {m: {k: {s: float(v) for s, v in st.items()} for k, st in mets.items()} for m, mets in d["models"].items()}
        return cls(fld, entries, {k: int(v) for k, v in d.get("mape_excluded", {}).items()})


# --------------------------------------------------------------------------- benchmark


def npm_forecast(labels: Mapping[date, RampLabel], day: date) -> tuple[float, int]:
    """Naive persistence: yesterday's (magnitude GW, start period) is today's forecast."""
    prev = labels.get(previous_day(day))
    if prev is None:
        raise EvaluationError(f"{day}: no label for the previous day")
    return prev.magnitude_gw, prev.start_period


# --------------------------------------------------------------------------- metrics


def error_terms(actual, predicted, fld: str) -> dict[str, np.ndarray]:
    """Per-day squared, absolute and absolute-percentage errors.

    Start-time percentages use 1-based periods in the denominator. Magnitude
    days with a zero actual get NaN in the MAPE term.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    err = np.abs(a - p)
    denom = np.abs(a + 1.0) if fld == "start_time" else np.abs(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ape = np.where(denom == 0, np.nan, 100.0 * err / denom)
    return {"MSE": err * err, "MAE": err, "MAPE": ape}


def metrics(records: Sequence[ForecastRecord], fld: str) -> tuple[dict[str, dict[str, float]], int]:
    """Mean and population std of each metric's per-day error term, plus the MAPE-excluded count."""
    if not records:
        raise EvaluationError("no records to score")
    if fld not in FIELDS:
        raise ValueError(f"unknown field {fld!r}")
    pairs = np.array([r.pair(fld) for r in records])
    terms = error_terms(pairs[:, 0], pairs[:, 1], fld)
    out = {}
    excluded = int(np.isnan(terms["MAPE"]).sum())
    if excluded:
        logger.warning("%s: %d records with zero actual excluded from MAPE", fld, excluded)
    for name in METRICS:
        e = terms[name]
        e = e[~np.isnan(e)]
        out[name] = {"mean": float(e.mean()), "std": float(e.std())} if e.size else {"mean": float("nan"), "std": float("nan")}
    return out, excluded


# --------------------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    records: list[ForecastRecord]
    tables: dict[str, MetricTable]
    clamped: int
    skipped_days: list[str]


def evaluate(
    models: Mapping[str, tuple[TrainedModel, TrainedModel]],
    test_samples: Sequence[Sample],
    labels: Mapping[date, RampLabel],
    include_npm: bool = True,
) -> EvalResult:
    """Score every (magnitude, start-time) model pair and NPM on the same test days.

    Days where NPM has no previous-day label are dropped for every model so
    that all table columns come from one record set.
    """
    if not test_samples:
        raise EvaluationError("empty test partition")
    fingerprints = {tm.data_fingerprint for pair in models.values() for tm in pair}
    if len(fingerprints) > 1:
        raise EvaluationError(f"models were trained on different partitions/scalers: {sorted(fingerprints)}")
    records: list[ForecastRecord] = []
    clamped = 0
    skipped = []
    for s in test_samples:
        act_mag, act_start = s.target_magnitude_gw, s.target_start
        try:
            npm = npm_forecast(labels, s.date) if include_npm else None
        except EvaluationError as exc:
            logger.warning("skipping test day: %s", exc)
            skipped.append(s.date.isoformat())
            continue
        for name, (mag_model, start_model) in models.items():
            mag = predict_magnitude(mag_model, s.window)
            start, was_clamped = predict_start_detail(start_model, s.window)
            clamped += was_clamped
            records.append(ForecastRecord(s.date, name, mag, act_mag, start, act_start, was_clamped))
        if npm is not None:
            records.append(ForecastRecord(s.date, "NPM", npm[0], act_mag, npm[1], act_start))
    if not records:
        raise EvaluationError("no test day could be scored")
    return EvalResult(records, build_tables(records), clamped, skipped)


def build_tables(records: Sequence[ForecastRecord]) -> dict[str, MetricTable]:
    present = {r.model for r in records}
    order = [m for m in MODELS if m in present] + sorted(present - set(MODELS))
    tables = {}
    for fld in FIELDS:
        table = MetricTable(fld)
        for m in order:
            stats, excluded = metrics([r for r in records if r.model == m], fld)
            table.entries[m] = stats
            table.mape_excluded[m] = excluded
        tables[fld] = table
    return tables


# --------------------------------------------------------------------------- report files


def dump_metrics(tables: Mapping[str, MetricTable]) -> str:
    doc = {fld: tables[fld].to_dict() for fld in FIELDS if fld in tables}
    return json.dumps(doc, indent=2) + "\n"


def parse_metrics(text: str) -> dict[str, MetricTable]:
    doc = json.loads(text)
    return {fld: MetricTable.from_dict(fld, d) for fld, d in doc.items()}


def format_table(table: MetricTable) -> str:
    """Plain-text table: metric/stat rows, one column per model."""
    title = {"magnitude": "Ramp magnitude forecast errors", "start_time": "Ramp start-time forecast errors"}[table.field]
    models = table.models
    lines = [f"{title} ({UNITS[table.field]})", "metric       | " + " | ".join(f"{m:>10}" for m in models)]
    for metric in METRICS:
        for stat in STATS:
            label = f"{metric if stat == 'mean' else '':<5}{stat:>6}"
            cells = " | ".join(f"{table.value(m, metric, stat):10.5f}" for m in models)
            lines.append(f"{label:<12} | {cells}")
    return "\n".join(lines) + "\n"


def write_forecasts(records: Sequence[ForecastRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "model", "pred_mag_gw", "act_mag_gw", "pred_start", "act_start"])
        for r in records:
            w.writerow([r.date.isoformat(), r.model, repr(r.pred_mag_gw), repr(r.act_mag_gw), r.pred_start, r.act_start])


def emit_report(result: EvalResult, out_dir: str | Path, manifest: Mapping) -> dict[str, Path]:
    """Write metrics.json, tables.txt, forecasts.csv and manifest.json into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths = {
        "metrics": out / "metrics.json",
        "tables": out / "tables.txt",
        "forecasts": out / "forecasts.csv",
        "manifest": out / "manifest.json",
    }
    paths["metrics"].write_text(dump_metrics(result.tables), encoding="utf-8")
    paths["tables"].write_text("\n".join(format_table(result.tables[f]) for f in FIELDS), encoding="utf-8")
    write_forecasts(result.records, paths["forecasts"])
    doc = dict(manifest)
    doc.update(
        {
            "clamped_start_predictions": result.clamped,
            "mape_excluded": {f: result.tables[f].mape_excluded for f in FIELDS},
            "skipped_test_days": result.skipped_days,
            "std_convention": "population (divide by n) over per-day error terms",
            "start_time_mape_denominator": "1-based period index (actual + 1)",
            "units": UNITS,
        }
    )
    paths["manifest"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
