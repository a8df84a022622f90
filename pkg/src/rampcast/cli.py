"""Command-line entry point: synth | ingest | label | train | evaluate | forecast.

Exit codes: 0 success, 1 internal/numerical failure, 2 user/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
import time
from datetime import date
from pathlib import Path

from . import evaluation, features, ramps, timeseries, training
from .config import CELL_OF_MODEL, TARGETS, RunConfig, SyntheticSource, load_config
from .neural import NumericalError

logger = logging.getLogger("rampcast")

OUT_ENV = "RAMPCAST_OUT"
FRAME_FILE = "frame.csv"
LABEL_FILE = "labels.csv"


class UserError(Exception):
    """Bad input or configuration; exit code 2."""


# --------------------------------------------------------------------------- helpers


def _out(cfg: RunConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UserError(f"{path} not found; run `rampcast {hint}` first")
    return path


def _synthetic_frame(cfg: RunConfig, seed: int | None = None, days: int | None = None) -> timeseries.SeriesFrame:
    src = cfg.synthetic or SyntheticSource()
    return timeseries.synth_duck(
        seed if seed is not None else src.seed,
        days if days is not None else src.days,
        start=date.fromisoformat(src.start),
        stations=cfg.stations,
    )


def _ingest_files(cfg: RunConfig) -> timeseries.SeriesFrame:
    frags = []
    p = cfg.power
    path = cfg.resolve(p.path)
    if not path.exists():
        raise UserError(f"power file not found: {path}")
    frags.append(timeseries.ingest_power(path, p.columns, p.timestamp_column, cfg.timezone))
    for w in cfg.weather:
        wpath = cfg.resolve(w.path)
        if not wpath.exists():
            raise UserError(f"station {w.station}: weather file not found: {wpath}")
        frags.append(timeseries.ingest_weather(wpath, w.station, w.kind, cfg.stations, w.value_column, w.timestamp_column, cfg.timezone))
    configured = {(w.station, w.kind) for w in cfg.weather}
    for kind, ids in (("temperature", cfg.stations.temperature), ("irradiance", cfg.stations.irradiance)):
        for sid in ids:
            if (sid, kind) not in configured:
                raise UserError(f"station {sid}: no {kind} file configured")
    return timeseries.merge_align(frags, cfg.fill_policy, cfg.stations)


def _summary(frame: timeseries.SeriesFrame) -> str:
    holes = (~frame.mask).sum(axis=0)
    imputed = frame.imputed.sum(axis=0)
    lines = [
        f"rows: {frame.index.count} ({frame.index.start:%Y-%m-%d %H:%M} .. {frame.index.end:%Y-%m-%d %H:%M})",
        "holes: " + (", ".join(f"{ch}={n}" for ch, n in zip(timeseries.CHANNELS, holes) if n) or "none"),
        "imputed: " + (", ".join(f"{ch}={n}" for ch, n in zip(timeseries.CHANNELS, imputed) if n) or "none"),
        f"net-load identity violations: {len(frame.identity_violations())}",
    ]
    return "\n".join(lines)


def _load_inputs(cfg: RunConfig):
    out = cfg.out
    frame = timeseries.read_frame(_need(out / FRAME_FILE, "ingest"))
    labels = ramps.read_labels(_need(out / LABEL_FILE, "label"))
    return frame, labels


def _dataset(cfg: RunConfig, frame, labels) -> features.Dataset:
    return features.build_dataset(frame, labels, cfg.window, cfg.split, cfg.scale_targets)


def _checkpoint_path(out: Path, cell: str, target: str) -> Path:
    return out / "checkpoints" / f"{cell}_{target}.json"


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _load_pair(out: Path, model: str) -> tuple[training.TrainedModel, training.TrainedModel]:
    cell = CELL_OF_MODEL[model]
    pair = []
    for target in TARGETS:
        path = _checkpoint_path(out, cell, target)
        if not path.exists():
            raise UserError(f"missing checkpoint for {model} ({target}): {path}")
        pair.append(training.load_trained(path))
    return pair[0], pair[1]


# --------------------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig, args) -> int:
    frame = _synthetic_frame(cfg, args.synth_seed, args.days)
    path = _out(cfg) / FRAME_FILE
    timeseries.write_frame(frame, path)
    print(f"wrote {path}")
    print(_summary(frame))
    return 0


def _parse_kv(items: list[str]) -> dict[str, int]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or key not in ("seed", "days"):
            raise UserError(f"--synthetic expects seed=N days=N, got {item!r}")
        out[key] = int(value)
    return out


def cmd_ingest(cfg: RunConfig, args) -> int:
    if args.synthetic is not None:
        kv = _parse_kv(args.synthetic)
        frame = _synthetic_frame(cfg, kv.get("seed"), kv.get("days"))
    elif cfg.power is not None:
        frame = _ingest_files(cfg)
    else:
        frame = _synthetic_frame(cfg)
    path = _out(cfg) / FRAME_FILE
    timeseries.write_frame(frame, path)
    print(f"wrote {path}")
    print(_summary(frame))
    return 0


def cmd_label(cfg: RunConfig, args) -> int:
    out = cfg.out
    frame = timeseries.read_frame(_need(out / FRAME_FILE, "ingest"))
    labels = ramps.build_label_set(frame)
    complete = {lab.date for lab in labels}
    for day in frame.dates():
        if day not in complete:
            print(f"skipped {day}: incomplete day", file=sys.stderr)
    path = out / LABEL_FILE
    ramps.write_labels(labels, path)
    print(f"wrote {path} ({len(labels)} labels)")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = cfg.out
    frame, labels = _load_inputs(cfg)
    ds = _dataset(cfg, frame, labels)
    features.save_samples(ds, out / "samples", cfg.hash())
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    models = [m for m, c in CELL_OF_MODEL.items() if args.cell in ("all", c)]
    targets = TARGETS if args.target == "both" else (args.target,)
    print(f"samples: train {len(ds.train)}, val {len(ds.val)}, test {len(ds.test)}")
    for model in models:
        for target in targets:
            tc = cfg.train_config(model, target)
            path = _checkpoint_path(out, CELL_OF_MODEL[model], target)
            tm = training.train(tc, ds.train, ds.val, ds.scalers, checkpoint_path=path, data_fingerprint=ds.fingerprint())
            training.save_trained(tm, path)
            training.write_history(tm, path.with_suffix(".history.csv"))
            hidden = "/".join(str(la.hidden) for la in tc.network.layers)
            best = tm.history[tm.best_epoch - 1]
            print(f"{model} {target}: {hidden} lr={tc.learning_rate:g} best epoch {tm.best_epoch} val {best.val_loss:.6g} -> {path}")
    return 0


def _manifest(cfg: RunConfig, frame, ds: features.Dataset, checkpoints: dict[str, str]) -> dict:
    return {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "seed_substreams": ["init", "shuffle", "dropout"],
        "data_range": [frame.index.start.isoformat(timespec="minutes"), frame.index.end.isoformat(timespec="minutes")],
        "split_fractions": list(cfg.split),
        "split_boundaries": ds.boundaries,
        "window": [cfg.window.start.isoformat("minutes"), cfg.window.end.isoformat("minutes"), cfg.window.length],
        "benchmarks": list(cfg.benchmarks),
        "checkpoints": checkpoints,
        "data_fingerprint": ds.fingerprint(),
    }


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if args.forecast_only is not None:
        day = args.forecast_only.partition("=")[2] or args.forecast_only
        return _forecast(cfg, day)
    out = cfg.out
    frame, labels = _load_inputs(cfg)
    ds = _dataset(cfg, frame, labels)
    models = {}
    checkpoints = {}
    for name in cfg.benchmarks:
        if name == "NPM":
            continue
        pair = _load_pair(out, name)
        for tm in pair:
            if tm.data_fingerprint != ds.fingerprint():
                raise UserError(f"{name} checkpoint was trained on different data or split; retrain")
        models[name] = pair
        for target in TARGETS:
            path = _checkpoint_path(out, CELL_OF_MODEL[name], target)
            checkpoints[f"{name}/{target}"] = _sha(path)
    result = evaluation.evaluate(models, ds.test, ramps.labels_by_date(labels), include_npm="NPM" in cfg.benchmarks)
    paths = evaluation.emit_report(result, out / "report", _manifest(cfg, frame, ds, checkpoints))
    print(paths["tables"].read_text(encoding="utf-8"))
    print(f"report written to {out / 'report'}")
    return 0


def _forecast(cfg: RunConfig, day_text: str) -> int:
    try:
        day = date.fromisoformat(day_text)
    except ValueError:
        raise UserError(f"bad date {day_text!r}; expected YYYY-MM-DD") from None
    out = cfg.out
    frame = timeseries.read_frame(_need(out / FRAME_FILE, "ingest"))
    mag_model, start_model = _load_pair(out, "PM")
    try:
        window = features.make_window(frame, mag_model.scalers, day, cfg.window)
    except features.SkipSample as exc:
        raise UserError(str(exc)) from None
    t0 = time.perf_counter()
    mag = training.predict_magnitude(mag_model, window)
    t1 = time.perf_counter()
    start, clamped = training.predict_start_detail(start_model, window)
    t2 = time.perf_counter()
    label = ramps.RampLabel(day, mag * 1000.0, start)
    print(f"date: {day}")
    print(f"magnitude: {mag:.4f} GW  ({(t1 - t0) * 1000:.1f} ms)")
    print(f"start: period {start} at {label.start_timestamp:%H:%M}{' (clamped)' if clamped else ''}  ({(t2 - t1) * 1000:.1f} ms)")
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    return _forecast(cfg, args.date)


# --------------------------------------------------------------------------- argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the top-level seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (beats $RAMPCAST_OUT)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rampcast", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic duck-curve frame")
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--synth-seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="ingest CSV files into the canonical frame")
    p.add_argument("--synthetic", nargs="*", metavar="KEY=VALUE", default=None, help="use synth data, e.g. seed=7 days=120")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", parents=[common], help="extract daily ramp labels")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], help="train networks")
    p.add_argument("--target", choices=["magnitude", "start_time", "both"], default="both")
    p.add_argument("--cell", choices=["lstm", "gru", "srn", "all"], default="lstm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score models on the test split and write the report")
    p.add_argument("--forecast-only", metavar="date=YYYY-MM-DD", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", parents=[common], help="single-day forecast with the LSTM pair")
    p.add_argument("--date", required=True)
    p.set_defaults(func=cmd_forecast)
    return parser


def resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(synthetic=SyntheticSource())
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV)
    if out:
        updates["output_dir"] = str(Path(out).resolve())
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (UserError, timeseries.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, training.TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
