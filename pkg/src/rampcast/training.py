"""Adam training of the magnitude and start-time networks."""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import IDENTITY, FeatureWindow, Sample, ScalerParams, ScalerSet, stack
from .neural import Model, NetworkSpec, NumericalError, ShapeError, backward, forward, init_params, load_checkpoint, save_checkpoint
from .ramps import LAST_START
from .timeseries import CHANNELS

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        self.checkpoint = checkpoint
        suffix = f" (last good checkpoint: {checkpoint})" if checkpoint else " (no checkpoint written)"
        super().__init__(message + suffix)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose ("init", "shuffle", "dropout", ...)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def substream_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(2**63 - 1))


@dataclass(frozen=True)
class TrainConfig:
    target: str
    network: NetworkSpec
    learning_rate: float
    epochs: int = 200
    batch_size: int = 32
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.target not in ("magnitude", "start_time"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, epochs and patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "network"}
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        d["network"] = NetworkSpec.from_dict(d["network"])
        return cls(**d)


def magnitude_config(cell: str = "lstm", **overrides) -> TrainConfig:
    """Defaults for the magnitude network: 512/1024/256 blocks, dropout 0.15/0.35/0.40, lr 3e-3."""
    hidden = overrides.pop("hidden", (512, 1024, 256))
    dropout = overrides.pop("dropout", (0.15, 0.35, 0.40))
    return TrainConfig("magnitude", NetworkSpec.stacked(cell, hidden, dropout), overrides.pop("learning_rate", 3e-3), **overrides)


def start_time_config(cell: str = "lstm", **overrides) -> TrainConfig:
    """Defaults for the start-time network: 128/256/32 blocks, dropout 0.20/0.10/0.10, lr 2.831e-5."""
    hidden = overrides.pop("hidden", (128, 256, 32))
    dropout = overrides.pop("dropout", (0.20, 0.10, 0.10))
    return TrainConfig("start_time", NetworkSpec.stacked(cell, hidden, dropout), overrides.pop("learning_rate", 2.831e-5), **overrides)


# --------------------------------------------------------------------------- loss / optimizer


def loss_sse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("empty loss")
    return float(np.sum((p - t) ** 2))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()}, 0)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name} at Adam step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, theta in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --------------------------------------------------------------------------- training loop


class EarlyStopping:
    """Track the best validation loss; stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.waited = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True if it is the new best."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.waited = val_loss, epoch, 0
            return True
        self.waited += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.waited >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float


@dataclass
class TrainedModel:
    model: Model
    scalers: ScalerSet
    config: TrainConfig
    history: list[EpochRecord]
    best_epoch: int
    data_fingerprint: str = ""

    @property
    def target_scaler(self) -> ScalerParams:
        return self.scalers.target(self.config.target)


def mean_squared(model: Model, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Eval-mode mean squared error (scaled units)."""
    total = 0.0
    for lo in range(0, len(y), batch_size):
        pred, _ = forward(model, X[lo : lo + batch_size])
        total += loss_sse(pred, y[lo : lo + batch_size])
    return total / len(y)


def train(
    config: TrainConfig,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    scalers: ScalerSet | None = None,
    checkpoint_path: str | Path | None = None,
    data_fingerprint: str = "",
) -> TrainedModel:
    """Mini-batch Adam on the summed squared error with best-validation snapshotting.

    With ``checkpoint_path`` set, the best snapshot so far is written there
    whenever it improves, so a divergence can point at the last good state.
    """
    if not train_samples or not val_samples:
        raise ValueError("training and validation partitions must be non-empty")
    target = config.target
    X_tr, y_tr = stack(train_samples, target)
    X_va, y_va = stack(val_samples, target)
    model = init_params(config.network, substream_seed(config.seed, "init"))
    params = model.params()
    adam = AdamState.like(params)
    shuffle_rng = substream(config.seed, "shuffle")
    dropout_rng = substream(config.seed, "dropout")
    stopper = EarlyStopping(config.patience)
    best = model.copy()
    history: list[EpochRecord] = []
    saved: Path | None = None
    n = len(y_tr)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        sse = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, n, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                pred, tape = forward(model, X_tr[idx], training=True, rng=dropout_rng)
                resid = pred - y_tr[idx]
                batch_sse = float(np.sum(resid * resid))
                if not math.isfinite(batch_sse):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}", saved)
                sse += batch_sse
                grads = backward(model, tape, 2.0 * resid)
                if config.clip_norm is not None:
                    clip_global_norm(grads, config.clip_norm)
                try:
                    adam_step(params, grads, adam, config.learning_rate, config.beta1, config.beta2, config.eps)
                except NumericalError as exc:
                    raise TrainingError(str(exc), saved) from exc
            val = mean_squared(model, X_va, y_va)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", saved)
        history.append(EpochRecord(epoch, sse / n, val, (time.perf_counter() - t0) * 1000.0))
        if stopper.update(epoch, val):
            best = model.copy()
            if checkpoint_path is not None:
                partial = TrainedModel(best, scalers or _identity_scalers(), config, history, epoch, data_fingerprint)
                saved = save_trained(partial, checkpoint_path)
        logger.debug("%s epoch %d train %.6g val %.6g", target, epoch, sse / n, val)
        if stopper.should_stop:
            logger.info("%s: early stop at epoch %d (best %d)", target, epoch, stopper.best_epoch)
            break
    return TrainedModel(best, scalers or _identity_scalers(), config, history, stopper.best_epoch, data_fingerprint)


def _identity_scalers() -> ScalerSet:
    return ScalerSet(tuple(replace(IDENTITY, feature=ch) for ch in CHANNELS), replace(IDENTITY, feature="magnitude"), replace(IDENTITY, feature="start_time"))


# --------------------------------------------------------------------------- prediction


def _raw_output(tm: TrainedModel, window: FeatureWindow) -> float:
    spec = tm.model.spec
    if window.X.shape != (spec.seq_len, spec.input_size):
        raise ShapeError(f"window {window.X.shape} does not fit network input ({spec.seq_len}, {spec.input_size})")
    y, _ = forward(tm.model, window.X)
    value = float(tm.target_scaler.inverse(y))
    if not math.isfinite(value):
        raise NumericalError(f"non-finite forecast for {window.date}")
    return value


def predict_magnitude(tm: TrainedModel, window: FeatureWindow) -> float:
    """Forecast ramp magnitude in GW."""
    if tm.config.target != "magnitude":
        raise ValueError("model was not trained for magnitude")
    return _raw_output(tm, window)


def round_start(raw: float) -> tuple[int, bool]:
    """Round half up to the nearest period and clamp to [0, 252]; also reports whether it clamped."""
    k = math.floor(raw + 0.5)
    clamped = min(max(k, 0), LAST_START)
    return clamped, clamped != k


def predict_start(tm: TrainedModel, window: FeatureWindow) -> int:
    return predict_start_detail(tm, window)[0]


def predict_start_detail(tm: TrainedModel, window: FeatureWindow) -> tuple[int, bool]:
    if tm.config.target != "start_time":
        raise ValueError("model was not trained for start_time")
    return round_start(_raw_output(tm, window))


# --------------------------------------------------------------------------- persistence


def save_trained(tm: TrainedModel, path: str | Path) -> Path:
    """Checkpoint with spec, scalers, seed, config and loss history (no wall times, so bytes are reproducible)."""
    meta = {
        "train_config": tm.config.to_dict(),
        "best_epoch": tm.best_epoch,
        "history": [[r.epoch, r.train_loss, r.val_loss] for r in tm.history],
        "data_fingerprint": tm.data_fingerprint,
    }
    return save_checkpoint(path, tm.model, tm.config.seed, tm.scalers.to_dict(), meta)


def load_trained(path: str | Path) -> TrainedModel:
    model, doc = load_checkpoint(path)
    meta = doc["meta"]
    config = TrainConfig.from_dict(meta["train_config"])
    history = [EpochRecord(int(e), tr, va, 0.0) for e, tr, va in meta["history"]]
    return TrainedModel(model, ScalerSet.from_dict(doc["scalers"]), config, history, meta["best_epoch"], meta["data_fingerprint"])


def write_history(tm: TrainedModel, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "wall_ms"])
        for r in tm.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_ms:.1f}"])
