"""Daily primary three-hour net-load ramp labels."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .timeseries import PERIODS_PER_DAY, STEP, SeriesFrame

logger = logging.getLogger(__name__)

WINDOW = 36  # 3 h of 5-minute periods
LAST_START = PERIODS_PER_DAY - WINDOW  # 252


class IncompleteDayError(ValueError):
    pass


class EmptyLabelSetError(ValueError):
    pass


@dataclass(frozen=True)
class RampLabel:
    date: date
    magnitude_mw: float
    start_period: int

    def __post_init__(self):
        if not 0 <= self.start_period <= LAST_START:
            raise ValueError(f"start_period {self.start_period} outside [0, {LAST_START}]")

    @property
    def start_timestamp(self) -> datetime:
        return datetime.combine(self.date, datetime.min.time()) + self.start_period * STEP

    @property
    def magnitude_gw(self) -> float:
        return self.magnitude_mw / 1000.0


def extract_ramp(day_series: Sequence[float] | np.ndarray, day: date, window: int = WINDOW) -> RampLabel:
    """Largest rise ``x[t + window] - x[t]`` over windows inside the day; earliest start wins ties."""
    x = np.asarray(day_series, dtype=float)
    if x.shape != (PERIODS_PER_DAY,):
        raise IncompleteDayError(f"{day}: expected {PERIODS_PER_DAY} values, got {x.shape}")
    if np.isnan(x).any():
        first = int(np.flatnonzero(np.isnan(x))[0])
        raise IncompleteDayError(f"{day}: missing net load at period {first}")
    rises = x[window:] - x[:-window]
    t = int(np.argmax(rises))  # first occurrence of the maximum
    return RampLabel(day, float(rises[t]), t)


def build_label_set(frame: SeriesFrame) -> list[RampLabel]:
    """One label per complete calendar day in the frame, chronologically."""
    labels = []
    net = frame.channel("net_load")
    for day in frame.dates():
        rows = frame.day_rows(day)
        if rows is None:
            logger.warning("skipping %s: frame does not cover the whole day", day)
            continue
        try:
            labels.append(extract_ramp(net[rows], day))
        except IncompleteDayError as exc:
            logger.warning("skipping %s", exc)
    if not labels:
        raise EmptyLabelSetError("frame contains no complete day")
    return labels


def write_labels(labels: Sequence[RampLabel], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "magnitude_mw", "start_period", "start_timestamp"])
        for lab in labels:
            w.writerow(
                [lab.date.isoformat(), repr(lab.magnitude_mw), lab.start_period, lab.start_timestamp.isoformat(timespec="minutes")]
            )


def read_labels(path: str | Path) -> list[RampLabel]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            RampLabel(date.fromisoformat(r["date"]), float(r["magnitude_mw"]), int(r["start_period"]))
            for r in csv.DictReader(fh)
        ]


def labels_by_date(labels: Sequence[RampLabel]) -> dict[date, RampLabel]:
    return {lab.date: lab for lab in labels}


def previous_day(day: date) -> date:
    return day - timedelta(days=1)
