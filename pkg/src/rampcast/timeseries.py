"""Five-minute multi-channel power/weather series: ingest, align, synthesize.

Frames are wall-clock local time. Each frame carries 13 channels in a fixed
order (4 power, 4 temperature stations, 5 irradiance stations) plus a
presence mask and an imputed-cell mask.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

import numpy as np

logger = logging.getLogger(__name__)

STEP = timedelta(minutes=5)
STEP_MINUTES = 5
PERIODS_PER_DAY = 288

POWER_CHANNELS = ("net_load", "load", "pv", "wind")
N_TEMPERATURE = 4
N_IRRADIANCE = 5
TEMPERATURE_CHANNELS = tuple(f"temp_{k}" for k in range(1, N_TEMPERATURE + 1))
IRRADIANCE_CHANNELS = tuple(f"irr_{k}" for k in range(1, N_IRRADIANCE + 1))
CHANNELS = POWER_CHANNELS + TEMPERATURE_CHANNELS + IRRADIANCE_CHANNELS


class IngestError(ValueError):
    """Unreadable row or timestamp; ``line`` is 1-based in the source file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyInputError(ValueError):
    pass


class ConflictError(ValueError):
    pass


class GapError(ValueError):
    def __init__(self, spans: list[tuple[str, datetime, datetime]]):
        self.spans = spans
        listed = ", ".join(f"{ch} {a:%Y-%m-%d %H:%M}..{b:%Y-%m-%d %H:%M}" for ch, a, b in spans)
        super().__init__(f"gaps not allowed under 'reject' policy: {listed}")


class ConfigError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Stations:
    """Configured weather-station identities, in channel order."""

    temperature: tuple[str, ...] = ("SFO", "SJC", "LAX", "SAC")
    irradiance: tuple[str, ...] = ("ROSAMOND", "LANCASTER", "DESERT_CENTER", "TOPAZ", "CVSR")

    def __post_init__(self):
        object.__setattr__(self, "temperature", tuple(self.temperature))
        object.__setattr__(self, "irradiance", tuple(self.irradiance))
        if len(self.temperature) != N_TEMPERATURE:
            raise ConfigError(f"need exactly {N_TEMPERATURE} temperature stations, got {len(self.temperature)}")
        if len(self.irradiance) != N_IRRADIANCE:
            raise ConfigError(f"need exactly {N_IRRADIANCE} irradiance stations, got {len(self.irradiance)}")
        if len(set(self.temperature)) != N_TEMPERATURE or len(set(self.irradiance)) != N_IRRADIANCE:
            raise ConfigError("duplicate station id in configuration")

    def channel(self, station_id: str, kind: str) -> str:
        if kind == "temperature":
            ids, names = self.temperature, TEMPERATURE_CHANNELS
        elif kind == "irradiance":
            ids, names = self.irradiance, IRRADIANCE_CHANNELS
        else:
            raise ConfigError(f"unknown weather kind {kind!r}")
        if station_id not in ids:
            raise ConfigError(f"station {station_id!r} is not a configured {kind} station")
        return names[ids.index(station_id)]

    def label(self, channel: str) -> str:
        """Column label used in serialized frames, e.g. ``temp:SFO``."""
        if channel in TEMPERATURE_CHANNELS:
            return f"temp:{self.temperature[TEMPERATURE_CHANNELS.index(channel)]}"
        if channel in IRRADIANCE_CHANNELS:
            return f"irr:{self.irradiance[IRRADIANCE_CHANNELS.index(channel)]}"
        return channel


@dataclass(frozen=True)
class TimeIndex:
    """Regular 5-minute grid of ``count`` stamps beginning at ``start``."""

    start: datetime
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("TimeIndex count must be >= 1")
        if self.start.tzinfo is not None:
            raise ValueError("TimeIndex holds naive wall-clock timestamps")
        if self.start.minute % STEP_MINUTES or self.start.second or self.start.microsecond:
            raise ValueError(f"start {self.start} is not aligned to the 5-minute grid")

    @property
    def step(self) -> timedelta:
        return STEP

    @property
    def end(self) -> datetime:
        """Last timestamp (inclusive)."""
        return self[self.count - 1]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, k: int) -> datetime:
        if k < 0:
            k += self.count
        if not 0 <= k < self.count:
            raise IndexError(k)
        return self.start + k * STEP

    def position(self, ts: datetime) -> int:
        """Grid offset of ``ts``; may fall outside ``[0, count)``."""
        delta = ts - self.start
        k, rem = divmod(delta, STEP)
        if rem:
            raise ValueError(f"{ts} is not on the grid")
        return k

    def timestamps(self) -> np.ndarray:
        return np.datetime64(self.start, "m") + np.arange(self.count) * np.timedelta64(STEP_MINUTES, "m")


@dataclass(frozen=True)
class DayCalendar:
    date: date
    periods: int = PERIODS_PER_DAY

    @property
    def day_of_week(self) -> int:
        """Monday = 0 ... Sunday = 6."""
        return self.date.weekday()

    @property
    def month_of_year(self) -> int:
        return self.date.month


@dataclass(frozen=True)
class Fragment:
    """Partial frame: a subset of channels over its own grid."""

    index: TimeIndex
    channels: tuple[str, ...]
    values: np.ndarray  # (count, len(channels)); NaN where absent
    mask: np.ndarray  # True where present

    def __post_init__(self):
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown channels {sorted(unknown)}")
        shape = (self.index.count, len(self.channels))
        if self.values.shape != shape or self.mask.shape != shape:
            raise ValueError(f"fragment arrays must have shape {shape}")


@dataclass(frozen=True)
class SeriesFrame:
    """Aligned 13-channel frame. Arrays are read-only once constructed."""

    index: TimeIndex
    values: np.ndarray  # (count, 13), NaN at holes
    mask: np.ndarray
    imputed: np.ndarray
    stations: Stations = field(default_factory=Stations)

    def __post_init__(self):
        shape = (self.index.count, len(CHANNELS))
        for name in ("values", "mask", "imputed"):
            arr = np.array(getattr(self, name), dtype=float if name == "values" else bool, copy=True)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(~np.isnan(self.values) != self.mask):
            raise ValueError("mask must flag exactly the non-NaN cells")
        irr = self.values[:, [CHANNELS.index(c) for c in IRRADIANCE_CHANNELS]]
        if np.any(irr[~np.isnan(irr)] < 0):
            raise ValidationError("irradiance must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, SeriesFrame):
            return NotImplemented
        return (
            self.index == other.index
            and self.stations == other.stations
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.imputed, other.imputed)
        )

    __hash__ = None

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, CHANNELS.index(name)]

    @property
    def power(self) -> np.ndarray:
        return self.values[:, :4]

    @property
    def temperature(self) -> np.ndarray:
        return self.values[:, 4:8]

    @property
    def irradiance(self) -> np.ndarray:
        return self.values[:, 8:13]

    def dates(self) -> list[date]:
        """Calendar dates touched by the index, in order."""
        first, last = self.index.start.date(), self.index.end.date()
        return [first + timedelta(days=k) for k in range((last - first).days + 1)]

    def day_rows(self, day: date) -> slice | None:
        """Row slice covering all 288 periods of ``day``, or None if the frame doesn't span it."""
        lo = self.index.position(datetime.combine(day, datetime.min.time()))
        hi = lo + PERIODS_PER_DAY
        if lo < 0 or hi > self.index.count:
            return None
        return slice(lo, hi)

    def identity_violations(self) -> list[tuple[datetime, float]]:
        """Rows where net_load differs from load - pv - wind beyond 1e-6 * max(1, |load|)."""
        nl, ld, pv, wd = (self.values[:, k] for k in range(4))
        resid = nl - (ld - pv - wd)
        tol = 1e-6 * np.maximum(1.0, np.abs(ld))
        with np.errstate(invalid="ignore"):
            bad = np.flatnonzero(np.abs(resid) > tol)
        return [(self.index[int(k)], float(resid[k])) for k in bad]


# --------------------------------------------------------------------------- ingest


def _parse_timestamp(text: str, tz: ZoneInfo | None) -> tuple[datetime, datetime | None]:
    """Return (wall-clock naive timestamp, absolute instant or None if naive input)."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts, None
    instant = ts
    if tz is not None:
        ts = ts.astimezone(tz)
    return ts.replace(tzinfo=None), instant


def snap(ts: datetime) -> datetime:
    """Round to the nearest 5-minute grid point (half-way rounds later)."""
    midnight = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    seconds = (ts - midnight).total_seconds()
    k = math.floor(seconds / (STEP_MINUTES * 60) + 0.5)
    return midnight + k * STEP


def _read_rows(
    path: str | Path,
    timestamp_column: str,
    columns: Mapping[str, str],
    tz: str | None,
    non_negative: Iterable[str] = (),
) -> Fragment:
    path = Path(path)
    zone = ZoneInfo(tz) if tz else None
    non_negative = set(non_negative)
    channels = tuple(columns)
    rows: dict[datetime, tuple[np.ndarray, datetime | None, int]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            ts_col = header.index(timestamp_column)
            cols = [header.index(columns[ch]) for ch in channels]
        except ValueError as exc:
            raise IngestError(f"{path}: missing column ({exc})", line=1) from None
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise IngestError(f"{path}: expected {len(header)} fields, got {len(row)}", line)
            try:
                wall, instant = _parse_timestamp(row[ts_col], zone)
            except ValueError:
                raise IngestError(f"{path}: unparseable timestamp {row[ts_col]!r}", line) from None
            slot = snap(wall)
            vals = np.full(len(channels), np.nan)
            for j, (ch, c) in enumerate(zip(channels, cols)):
                cell = row[c].strip()
                if not cell:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(f"{path}: non-numeric {ch} value {cell!r}", line) from None
                if ch in non_negative and v < 0:
                    raise ValidationError(f"{path}: negative {ch} value {v} at {slot:%Y-%m-%d %H:%M} (line {line})")
                vals[j] = v if math.isfinite(v) else np.nan
            if slot in rows:
                _, prev_instant, prev_line = rows[slot]
                # Fall-back DST repeats the wall-clock hour: distinct instants, first occurrence wins.
                if instant is not None and prev_instant is not None and instant != prev_instant:
                    logger.info("%s: line %d repeats wall-clock %s (DST); keeping line %d", path, line, slot, prev_line)
                    continue
                raise ConflictError(f"{path}: duplicate timestamp {slot:%Y-%m-%d %H:%M} (lines {prev_line} and {line})")
            rows[slot] = (vals, instant, line)
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    slots = sorted(rows)
    index = TimeIndex(slots[0], index_count(slots[0], slots[-1]))
    values = np.full((index.count, len(channels)), np.nan)
    for slot in slots:
        values[index.position(slot)] = rows[slot][0]
    return Fragment(index, channels, values, ~np.isnan(values))


def index_count(first: datetime, last: datetime) -> int:
    return (last - first) // STEP + 1


def ingest_power(
    path: str | Path,
    schema: Mapping[str, str],
    timestamp_column: str = "timestamp",
    tz: str | None = None,
) -> Fragment:
    """Read a power CSV. ``schema`` maps channel name (net_load/load/pv/wind) to CSV column."""
    bad = set(schema) - set(POWER_CHANNELS)
    if bad:
        raise ConfigError(f"schema maps unknown power channels {sorted(bad)}")
    return _read_rows(path, timestamp_column, dict(schema), tz)


def ingest_weather(
    path: str | Path,
    station_id: str,
    kind: str,
    stations: Stations,
    value_column: str = "value",
    timestamp_column: str = "timestamp",
    tz: str | None = None,
) -> Fragment:
    """Read one station's temperature (degF) or irradiance (W/m^2) CSV into its channel."""
    channel = stations.channel(station_id, kind)
    non_negative = (channel,) if kind == "irradiance" else ()
    return _read_rows(path, timestamp_column, {channel: value_column}, tz, non_negative)


# --------------------------------------------------------------------------- align


@dataclass(frozen=True)
class FillPolicy:
    """``reject`` | ``forward_fill`` | ``linear``; gaps longer than ``max_gap`` periods stay holes."""

    kind: str = "forward_fill"
    max_gap: int = 6

    def __post_init__(self):
        if self.kind not in ("reject", "forward_fill", "linear"):
            raise ConfigError(f"unknown fill policy {self.kind!r}")
        if self.max_gap < 0:
            raise ConfigError("max_gap must be >= 0")


def _runs(missing: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [a, b) runs of True."""
    if not missing.any():
        return []
    padded = np.concatenate(([False], missing, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def merge_align(
    fragments: Sequence[Fragment],
    fill_policy: FillPolicy = FillPolicy(),
    stations: Stations | None = None,
) -> SeriesFrame:
    """Combine fragments on their union grid and fill short gaps per ``fill_policy``.

    Cells supplied by more than one fragment must agree exactly. Channels no
    fragment provides are left as holes.
    """
    if not fragments:
        raise EmptyInputError("no fragments to merge")
    first = min(f.index.start for f in fragments)
    last = max(f.index.end for f in fragments)
    index = TimeIndex(first, index_count(first, last))
    values = np.full((index.count, len(CHANNELS)), np.nan)
    for frag in fragments:
        lo = index.position(frag.index.start)
        rows = slice(lo, lo + frag.index.count)
        for j, ch in enumerate(frag.channels):
            col = CHANNELS.index(ch)
            new = frag.values[:, j]
            old = values[rows, col]
            clash = ~np.isnan(old) & ~np.isnan(new) & (old != new)
            if clash.any():
                k = int(np.flatnonzero(clash)[0])
                raise ConflictError(
                    f"conflicting {ch} values at {frag.index[k]:%Y-%m-%d %H:%M}: {old[k]!r} vs {new[k]!r}"
                )
            take = np.isnan(old) & ~np.isnan(new)
            old[take] = new[take]
            values[rows, col] = old

    imputed = np.zeros_like(values, dtype=bool)
    spans = []
    for col, ch in enumerate(CHANNELS):
        series = values[:, col]
        for a, b in _runs(np.isnan(series)):
            if fill_policy.kind == "reject":
                spans.append((ch, index[a], index[b - 1]))
                continue
            if b - a > fill_policy.max_gap:
                continue
            if fill_policy.kind == "forward_fill":
                if a == 0:
                    continue
                series[a:b] = series[a - 1]
            else:
                if a == 0 or b == index.count:
                    continue
                left, right = series[a - 1], series[b]
                w = np.arange(1, b - a + 1) / (b - a + 1)
                series[a:b] = left + w * (right - left)
            imputed[a:b, col] = True
    if spans:
        raise GapError(spans)
    return SeriesFrame(index, values, ~np.isnan(values), imputed, stations or Stations())


# --------------------------------------------------------------------------- serialization


def write_frame(frame: SeriesFrame, path: str | Path) -> None:
    """One row per grid timestamp: 13 value columns (empty at holes) then 13 imputed flags."""
    labels = [frame.stations.label(ch) for ch in CHANNELS]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *labels, *(f"imputed:{lab}" for lab in labels)])
        for k in range(frame.index.count):
            vals = ["" if np.isnan(v) else repr(float(v)) for v in frame.values[k]]
            flags = ["1" if f else "0" for f in frame.imputed[k]]
            w.writerow([frame.index[k].isoformat(timespec="minutes"), *vals, *flags])


def read_frame(path: str | Path) -> SeriesFrame:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty frame file")
        labels = header[1 : 1 + len(CHANNELS)]
        temps = tuple(lab.split(":", 1)[1] for lab in labels[4:8])
        irrs = tuple(lab.split(":", 1)[1] for lab in labels[8:13])
        stamps, vals, flags = [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                stamps.append(datetime.fromisoformat(row[0]))
                vals.append([float(c) if c else np.nan for c in row[1:14]])
                flags.append([c == "1" for c in row[14:27]])
            except (ValueError, IndexError):
                raise IngestError(f"{path}: malformed frame row", line) from None
    if not stamps:
        raise EmptyInputError(f"{path}: frame has no rows")
    index = TimeIndex(stamps[0], len(stamps))
    if stamps[-1] != index.end:
        raise IngestError(f"{path}: frame rows are not a contiguous 5-minute grid")
    values = np.array(vals, dtype=float)
    return SeriesFrame(index, values, ~np.isnan(values), np.array(flags, dtype=bool), Stations(temps, irrs))


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class DuckParams:
    """Knobs for the synthetic duck-curve generator (MW, degF, W/m^2)."""

    base_load: float = 21000.0
    morning_peak: float = 2500.0
    evening_peak: float = 7000.0
    weekend_load_offset: float = -1800.0
    weekend_evening_scale: float = 0.72
    evening_noise: float = 0.05  # relative, iid per day
    cooling_mw_per_degf: float = 260.0
    heating_mw_per_degf: float = 110.0
    pv_capacity_winter: float = 7000.0
    pv_capacity_summer: float = 12500.0
    wind_mean: float = 2200.0
    wind_sd: float = 700.0
    wind_corr_hours: float = 6.0
    temp_mean: float = 62.0
    temp_seasonal: float = 14.0
    temp_diurnal: float = 9.0
    temp_anomaly_sd: float = 4.0
    load_noise: float = 60.0


def _bump(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def synth_duck(
    seed: int,
    days: int,
    params: DuckParams = DuckParams(),
    start: date = date(2019, 1, 1),
    stations: Stations | None = None,
) -> SeriesFrame:
    """Deterministic synthetic year-like data with a late-afternoon net-load ramp.

    load  = base + morning/evening bumps + weekday offset + temperature coupling
    pv    = seasonal capacity * mean station irradiance / 1000
    wind  = AR(1)-smoothed noise
    net   = load - pv - wind (exactly)
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    p = params
    rng = np.random.default_rng(seed)
    n = days * PERIODS_PER_DAY
    hours = (np.arange(PERIODS_PER_DAY) * STEP_MINUTES / 60.0)[None, :]  # (1, 288)
    day_dates = [start + timedelta(days=d) for d in range(days)]
    doy = np.array([d.timetuple().tm_yday for d in day_dates], dtype=float)[:, None]
    weekend = np.array([d.weekday() >= 5 for d in day_dates])[:, None]
    season = -np.cos(2 * np.pi * (doy - 10) / 365.25)  # -1 midwinter, +1 midsummer

    # Solar geometry: longer days and later sunset in summer.
    daylength = 12.0 + 2.2 * season
    noon = 12.5
    solar = np.clip(np.cos(np.pi * (hours - noon) / daylength), 0.0, None) ** 1.3
    solar[np.abs(hours - noon) > daylength / 2] = 0.0

    clouds_day = rng.beta(8.0, 1.6, size=(days, 1))
    station_clouds = np.clip(clouds_day + rng.normal(0, 0.04, size=(days, N_IRRADIANCE)), 0.05, 1.0)
    peak_irr = 880.0 + 170.0 * season  # (days, 1)
    irr = np.stack([peak_irr * station_clouds[:, [k]] * solar for k in range(N_IRRADIANCE)], axis=-1)
    irr = np.maximum(irr + rng.normal(0, 6.0, size=irr.shape) * (solar[..., None] > 0), 0.0)

    anomaly = np.zeros((days, 1))
    for d in range(1, days):
        anomaly[d] = 0.7 * anomaly[d - 1] + rng.normal(0, p.temp_anomaly_sd * math.sqrt(1 - 0.49))
    station_offsets = np.array([-6.0, -2.0, 4.0, 8.0])
    diurnal = np.cos(2 * np.pi * (hours - 15.0) / 24.0)
    temps = np.stack(
        [
            p.temp_mean + p.temp_seasonal * season + off * (0.6 + 0.4 * season) + p.temp_diurnal * diurnal + anomaly
            + rng.normal(0, 0.6, size=(days, PERIODS_PER_DAY))
            for off in station_offsets
        ],
        axis=-1,
    )
    mean_temp = temps.mean(axis=-1)
    thermal = p.cooling_mw_per_degf * np.clip(mean_temp - 68.0, 0, None) + p.heating_mw_per_degf * np.clip(
        55.0 - mean_temp, 0, None
    )

    evening_factor = (1.0 - 0.35 * np.clip(season, 0, None)) * (1.0 + rng.normal(0, p.evening_noise, size=(days, 1)))
    evening_factor = np.where(weekend, p.weekend_evening_scale * evening_factor, evening_factor)
    sunset = noon + daylength / 2
    load = (
        p.base_load
        + np.where(weekend, p.weekend_load_offset, 0.0)
        + p.morning_peak * _bump(hours, 8.0, 1.4)
        + p.evening_peak * evening_factor * _bump(hours, sunset + 0.8, 2.0)
        - 3000.0 * _bump(hours, 3.5, 2.0)
        + thermal
        + rng.normal(0, p.load_noise, size=(days, PERIODS_PER_DAY))
    )

    pv_cap = p.pv_capacity_winter + (p.pv_capacity_summer - p.pv_capacity_winter) * (season + 1) / 2
    pv = pv_cap * irr.mean(axis=-1) / 1000.0

    # Wind: AR(1) at 5-min resolution with an hours-long correlation time.
    phi = math.exp(-STEP_MINUTES / (60.0 * p.wind_corr_hours))
    shocks = rng.normal(0, p.wind_sd * math.sqrt(1 - phi * phi), size=n)
    wind = np.empty(n)
    level = rng.normal(0, p.wind_sd)
    for k in range(n):
        level = phi * level + shocks[k]
        wind[k] = level
    wind = np.clip(p.wind_mean + wind, 0.0, None)

    load_f, pv_f = load.reshape(n), pv.reshape(n)
    values = np.column_stack(
        [load_f - pv_f - wind, load_f, pv_f, wind, temps.reshape(n, N_TEMPERATURE), irr.reshape(n, N_IRRADIANCE)]
    )
    index = TimeIndex(datetime.combine(start, datetime.min.time()), n)
    return SeriesFrame(index, values, np.ones_like(values, dtype=bool), np.zeros_like(values, dtype=bool), stations or Stations())
