"""Scaled/encoded input windows and targets for next-day ramp forecasting.

Column order of every window matrix::

    net_load, load, pv, wind | temp x4 | irr x5 | day-of-week one-hot x7 | month one-hot x12
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ramps import RampLabel
from .timeseries import CHANNELS, STEP, SeriesFrame

logger = logging.getLogger(__name__)

N_PHYSICAL = len(CHANNELS)  # 13
N_DOW, N_MONTH = 7, 12
N_FEATURES = N_PHYSICAL + N_DOW + N_MONTH  # 32
FEATURE_COLUMNS = CHANNELS + tuple(f"dow_{k}" for k in range(N_DOW)) + tuple(f"month_{k}" for k in range(1, 13))
TARGETS = ("magnitude", "start_time")
SCHEMA_VERSION = 1


class SkipSample(ValueError):
    """A forecast day cannot be turned into a sample (missing history or label)."""


@dataclass(frozen=True)
class ScalerParams:
    """Affine min-max map onto [-1, 1]; a degenerate range maps everything to 0."""

    feature: str
    min: float
    max: float

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)):
            raise ValueError(f"non-finite scaler bounds for {self.feature}")
        if self.max < self.min:
            raise ValueError(f"scaler for {self.feature}: max < min")

    @property
    def degenerate(self) -> bool:
        return self.max == self.min

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.zeros_like(x)
        return 2.0 * (x - self.min) / (self.max - self.min) - 1.0

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.degenerate:
            return np.full_like(y, self.min)
        return self.min + (y + 1.0) * (self.max - self.min) / 2.0


IDENTITY = ScalerParams("identity", -1.0, 1.0)


def fit_scaler(feature: str, values) -> ScalerParams:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError(f"cannot fit scaler for {feature}: empty partition")
    if not np.isfinite(v).all():
        raise ValueError(f"cannot fit scaler for {feature}: non-finite values")
    return ScalerParams(feature, float(v.min()), float(v.max()))


def invert_target(scaled, scaler: ScalerParams) -> float:
    return float(scaler.inverse(scaled))


@dataclass(frozen=True)
class ScalerSet:
    physical: tuple[ScalerParams, ...]  # one per channel, CHANNELS order
    magnitude: ScalerParams  # GW
    start_time: ScalerParams  # periods

    def target(self, name: str) -> ScalerParams:
        return {"magnitude": self.magnitude, "start_time": self.start_time}[name]

    def scale_physical(self, raw: np.ndarray) -> np.ndarray:
        return np.column_stack([s.transform(raw[:, k]) for k, s in enumerate(self.physical)])

    def to_dict(self) -> dict:
        return {s.feature: [s.min, s.max] for s in (*self.physical, self.magnitude, self.start_time)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[float]]) -> "ScalerSet":
        phys = tuple(ScalerParams(ch, float(d[ch][0]), float(d[ch][1])) for ch in CHANNELS)
        return cls(
            phys,
            ScalerParams("magnitude", float(d["magnitude"][0]), float(d["magnitude"][1])),
            ScalerParams("start_time", float(d["start_time"][0]), float(d["start_time"][1])),
        )


def encode_calendar(day_of_week: int, month: int) -> np.ndarray:
    """19-vector: one-hot day of week (Mon=0) followed by one-hot month (Jan=1)."""
    if not 0 <= day_of_week <= 6:
        raise ValueError(f"day_of_week {day_of_week} outside 0..6")
    if not 1 <= month <= 12:
        raise ValueError(f"month {month} outside 1..12")
    v = np.zeros(N_DOW + N_MONTH)
    v[day_of_week] = 1.0
    v[N_DOW + month - 1] = 1.0
    return v


@dataclass(frozen=True)
class WindowSpec:
    """Look-back window on the day before the forecast day (end exclusive)."""

    start: time = time(12, 0)
    end: time = time(20, 0)

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("window end must follow start on the same day")
        for t in (self.start, self.end):
            if t.minute % 5 or t.second:
                raise ValueError(f"window bound {t} not on the 5-minute grid")

    @property
    def length(self) -> int:
        span = datetime.combine(date.min, self.end) - datetime.combine(date.min, self.start)
        return span // STEP

    def first_timestamp(self, forecast_day: date) -> datetime:
        return datetime.combine(forecast_day - timedelta(days=1), self.start)


@dataclass(frozen=True)
class FeatureWindow:
    date: date  # forecast day
    X: np.ndarray  # (T, 32)
    first_timestamp: datetime

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def last_timestamp(self) -> datetime:
        return self.first_timestamp + (self.X.shape[0] - 1) * STEP


@dataclass(frozen=True)
class Sample:
    window: FeatureWindow
    target_magnitude: float  # MW
    target_start: int
    scaled_magnitude: float
    scaled_start: float

    @property
    def date(self) -> date:
        return self.window.date

    @property
    def target_magnitude_gw(self) -> float:
        return self.target_magnitude / 1000.0

    def scaled_target(self, target: str) -> float:
        return self.scaled_magnitude if target == "magnitude" else self.scaled_start

    def raw_target(self, target: str) -> float:
        return self.target_magnitude_gw if target == "magnitude" else float(self.target_start)


def raw_window(frame: SeriesFrame, forecast_day: date, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Unscaled (T, 13) physical history for ``forecast_day``; raises SkipSample on holes."""
    first = spec.first_timestamp(forecast_day)
    lo = frame.index.position(first)
    hi = lo + spec.length
    if lo < 0 or hi > frame.index.count:
        raise SkipSample(f"{forecast_day}: history window {first} outside frame")
    block = frame.values[lo:hi]
    if not frame.mask[lo:hi].all():
        raise SkipSample(f"{forecast_day}: history window has missing cells")
    return np.array(block)


def calendar_block(first: datetime, length: int) -> np.ndarray:
    rows = []
    for k in range(length):
        ts = first + k * STEP
        rows.append(encode_calendar(ts.weekday(), ts.month))
    return np.array(rows)


def make_window(frame: SeriesFrame, scalers: ScalerSet, forecast_day: date, spec: WindowSpec = WindowSpec()) -> FeatureWindow:
    raw = raw_window(frame, forecast_day, spec)
    first = spec.first_timestamp(forecast_day)
    X = np.hstack([scalers.scale_physical(raw), calendar_block(first, spec.length)])
    return FeatureWindow(forecast_day, X, first)


def build_sample(
    frame: SeriesFrame,
    labels: Mapping[date, RampLabel],
    scalers: ScalerSet,
    forecast_day: date,
    spec: WindowSpec = WindowSpec(),
) -> Sample:
    label = labels.get(forecast_day)
    if label is None:
        raise SkipSample(f"{forecast_day}: no ramp label")
    window = make_window(frame, scalers, forecast_day, spec)
    return Sample(
        window,
        label.magnitude_mw,
        label.start_period,
        float(scalers.magnitude.transform(label.magnitude_gw)),
        float(scalers.start_time.transform(label.start_period)),
    )


def candidate_days(frame: SeriesFrame, labels: Sequence[RampLabel], spec: WindowSpec = WindowSpec()) -> list[date]:
    """Labelled days whose previous-day history window is complete."""
    days = []
    for lab in labels:
        try:
            raw_window(frame, lab.date, spec)
        except SkipSample as exc:
            logger.info("no sample: %s", exc)
            continue
        days.append(lab.date)
    return days


def split_sequential(items: Sequence, fractions: Sequence[float] = (0.70, 0.15, 0.15)) -> tuple[list, list, list]:
    """Contiguous chronological split; floor sizes for train/val, remainder to test."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(items)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    # Tiny epsilon keeps e.g. 0.7 * 10 from flooring to 6.
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    items = list(items)
    return items[:n_train], items[n_train : n_train + n_val], items[n_train + n_val :]


def fit_scalers(
    frame: SeriesFrame,
    labels: Mapping[date, RampLabel],
    train_days: Sequence[date],
    spec: WindowSpec = WindowSpec(),
    scale_targets: bool = True,
) -> ScalerSet:
    """Fit the 13 physical scalers on training windows and the 2 target scalers on training labels."""
    if not train_days:
        raise ValueError("empty training partition")
    raw = np.vstack([raw_window(frame, d, spec) for d in train_days])
    physical = tuple(fit_scaler(ch, raw[:, k]) for k, ch in enumerate(CHANNELS))
    if scale_targets:
        mag = fit_scaler("magnitude", [labels[d].magnitude_gw for d in train_days])
        start = fit_scaler("start_time", [labels[d].start_period for d in train_days])
    else:
        mag = ScalerParams("magnitude", -1.0, 1.0)
        start = ScalerParams("start_time", -1.0, 1.0)
    return ScalerSet(physical, mag, start)


@dataclass(frozen=True)
class Dataset:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    scalers: ScalerSet
    window: WindowSpec

    @property
    def boundaries(self) -> dict[str, list[str]]:
        return {
            name: [part[0].date.isoformat(), part[-1].date.isoformat()] if part else []
            for name, part in (("train", self.train), ("val", self.val), ("test", self.test))
        }

    def fingerprint(self) -> str:
        """Identifies the partitions and scalers; models trained on one dataset share it."""
        blob = json.dumps({"b": self.boundaries, "s": self.scalers.to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_dataset(
    frame: SeriesFrame,
    labels: Sequence[RampLabel],
    spec: WindowSpec = WindowSpec(),
    fractions: Sequence[float] = (0.70, 0.15, 0.15),
    scale_targets: bool = True,
) -> Dataset:
    by_date = {lab.date: lab for lab in labels}
    days = candidate_days(frame, labels, spec)
    train_days, val_days, test_days = split_sequential(days, fractions)
    scalers = fit_scalers(frame, by_date, train_days, spec, scale_targets)

    def make(ds: Iterable[date]) -> list[Sample]:
        return [build_sample(frame, by_date, scalers, d, spec) for d in ds]

    return Dataset(make(train_days), make(val_days), make(test_days), scalers, spec)


def stack(samples: Sequence[Sample], target: str) -> tuple[np.ndarray, np.ndarray]:
    """(B, T, 32) inputs and (B,) scaled targets."""
    X = np.stack([s.window.X for s in samples])
    y = np.array([s.scaled_target(target) for s in samples])
    return X, y


def save_samples(dataset: Dataset, out_dir: str | Path, config_hash: str = "") -> Path:
    """Directory of per-day matrices (CSV, 32 columns) plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for part, samples in (("train", dataset.train), ("val", dataset.val), ("test", dataset.test)):
        for s in samples:
            name = f"{s.date.isoformat()}.csv"
            with (out / name).open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(FEATURE_COLUMNS)
                w.writerows([[repr(float(v)) for v in row] for row in s.window.X])
            entries.append(
                {
                    "date": s.date.isoformat(),
                    "partition": part,
                    "file": name,
                    "first_timestamp": s.window.first_timestamp.isoformat(timespec="minutes"),
                    "target_magnitude_mw": s.target_magnitude,
                    "target_start": s.target_start,
                    "scaled_magnitude": s.scaled_magnitude,
                    "scaled_start": s.scaled_start,
                }
            )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "columns": list(FEATURE_COLUMNS),
        "window": [dataset.window.start.isoformat("minutes"), dataset.window.end.isoformat("minutes")],
        "scalers": dataset.scalers.to_dict(),
        "config_hash": config_hash,
        "samples": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_samples(out_dir: str | Path) -> Dataset:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported sample schema {manifest['schema_version']}")
    parts: dict[str, list[Sample]] = {"train": [], "val": [], "test": []}
    for e in manifest["samples"]:
        X = np.loadtxt(out / e["file"], delimiter=",", skiprows=1, ndmin=2)
        win = FeatureWindow(date.fromisoformat(e["date"]), X, datetime.fromisoformat(e["first_timestamp"]))
        parts[e["partition"]].append(
            Sample(win, e["target_magnitude_mw"], e["target_start"], e["scaled_magnitude"], e["scaled_start"])
        )
    start, end = (time.fromisoformat(t) for t in manifest["window"])
    return Dataset(parts["train"], parts["val"], parts["test"], ScalerSet.from_dict(manifest["scalers"]), WindowSpec(start, end))
