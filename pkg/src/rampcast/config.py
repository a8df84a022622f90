"""Run configuration: one YAML file drives every command."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import date, time
from pathlib import Path
from typing import Any, Mapping

import yaml

from .features import WindowSpec
from .timeseries import ConfigError, FillPolicy, Stations
from .training import TrainConfig, magnitude_config, start_time_config, substream_seed

CELL_OF_MODEL = {"PM": "lstm", "GRU": "gru", "SRN": "srn"}
TARGETS = ("magnitude", "start_time")


@dataclass(frozen=True)
class SyntheticSource:
    seed: int = 7
    days: int = 365
    start: str = "2019-01-01"


@dataclass(frozen=True)
class PowerSource:
    path: str
    columns: dict[str, str]
    timestamp_column: str = "timestamp"


@dataclass(frozen=True)
class WeatherSource:
    station: str
    kind: str
    path: str
    value_column: str = "value"
    timestamp_column: str = "timestamp"


@dataclass(frozen=True)
class TargetSettings:
    """Overrides on top of the default architecture for one target; None keeps the default."""

    hidden: tuple[int, ...] | None = None
    dropout: tuple[float, ...] | None = None
    learning_rate: float | None = None
    epochs: int = 200
    batch_size: int = 32
    patience: int = 20
    clip_norm: float | None = 5.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    timezone: str = "America/Los_Angeles"
    output_dir: str = "out"
    synthetic: SyntheticSource | None = None
    power: PowerSource | None = None
    weather: tuple[WeatherSource, ...] = ()
    stations: Stations = field(default_factory=Stations)
    fill_policy: FillPolicy = field(default_factory=FillPolicy)
    window: WindowSpec = field(default_factory=WindowSpec)
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    scale_targets: bool = True
    magnitude: TargetSettings = field(default_factory=TargetSettings)
    start_time: TargetSettings = field(default_factory=TargetSettings)
    benchmarks: tuple[str, ...] = ("PM", "GRU", "SRN", "NPM")
    base_dir: str = "."

    def __post_init__(self):
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")
        unknown = set(self.benchmarks) - {"PM", "GRU", "SRN", "NPM"}
        if unknown:
            raise ConfigError(f"unknown benchmarks {sorted(unknown)}")
        if self.synthetic is None and self.power is None:
            raise ConfigError("config needs either a 'synthetic' or a 'power' data source")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def train_config(self, model: str, target: str) -> TrainConfig:
        cell = CELL_OF_MODEL[model]
        s: TargetSettings = getattr(self, target)
        overrides: dict[str, Any] = {
            "epochs": s.epochs,
            "batch_size": s.batch_size,
            "patience": s.patience,
            "clip_norm": s.clip_norm,
            "seed": substream_seed(self.seed, f"train/{cell}/{target}"),
        }
        for key in ("hidden", "dropout", "learning_rate"):
            if getattr(s, key) is not None:
                overrides[key] = getattr(s, key)
        make = magnitude_config if target == "magnitude" else start_time_config
        cfg = make(cell, **overrides)
        if cfg.network.seq_len != self.window.length:
            cfg = TrainConfig.from_dict({**cfg.to_dict(), "network": {**cfg.network.to_dict(), "seq_len": self.window.length}})
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = {"start": self.window.start.isoformat("minutes"), "end": self.window.end.isoformat("minutes")}
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        """Digest of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()[:16]

    @property
    def synthetic_start(self) -> date:
        return date.fromisoformat(self.synthetic.start) if self.synthetic else date(2019, 1, 1)


def _tuple(v):
    return tuple(v) if v is not None else None


def config_from_dict(d: Mapping, base_dir: str | Path = ".") -> RunConfig:
    d = dict(d or {})
    known = set(RunConfig.__dataclass_fields__) - {"base_dir"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    try:
        kw: dict[str, Any] = {k: d[k] for k in ("seed", "timezone", "output_dir", "scale_targets") if k in d}
        if d.get("synthetic") is not None:
            kw["synthetic"] = SyntheticSource(**d["synthetic"])
        if d.get("power") is not None:
            kw["power"] = PowerSource(**d["power"])
        kw["weather"] = tuple(WeatherSource(**w) for w in d.get("weather") or ())
        if "stations" in d:
            kw["stations"] = Stations(tuple(d["stations"]["temperature"]), tuple(d["stations"]["irradiance"]))
        if "fill_policy" in d:
            kw["fill_policy"] = FillPolicy(**d["fill_policy"])
        if "window" in d:
            kw["window"] = WindowSpec(time.fromisoformat(str(d["window"]["start"])), time.fromisoformat(str(d["window"]["end"])))
        if "split" in d:
            kw["split"] = tuple(float(x) for x in d["split"])
        for target in TARGETS:
            if target in d:
                t = dict(d[target])
                for key in ("hidden", "dropout"):
                    t[key] = _tuple(t.get(key))
                kw[target] = TargetSettings(**t)
        if "benchmarks" in d:
            kw["benchmarks"] = tuple(d["benchmarks"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(base_dir=str(base_dir), **kw)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc or {}, base_dir=path.parent)
