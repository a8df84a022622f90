"""Recurrent networks (SRN, GRU, LSTM) with exact backpropagation through time.

Everything is float64 numpy. Each cell stores its gates fused along the last
axis::

    W: (input, G*hidden)   U: (hidden, G*hidden)   b: (G*hidden,)

with gate order LSTM = (input, forget, output, candidate), GRU = (update,
reset, candidate), SRN = (candidate,). A network is a stack of cells whose
output sequences feed the next layer, inverted dropout on each layer's
output in training mode, and a linear single-output head reading the top
layer's final hidden state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

GATES = {
    "lstm": ("input", "forget", "output", "candidate"),
    "gru": ("update", "reset", "candidate"),
    "srn": ("candidate",),
}
CHECKPOINT_VERSION = 1


class NumericalError(ArithmeticError):
    pass


class ShapeError(ValueError):
    pass


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hidden: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in GATES:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.hidden < 1:
            raise ValueError("hidden size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate {self.dropout} outside [0, 1)")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_size: int = 32
    seq_len: int = 96

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("network needs at least one layer")

    @classmethod
    def stacked(cls, kind: str, hidden, dropout=None, input_size: int = 32, seq_len: int = 96) -> "NetworkSpec":
        dropout = dropout if dropout is not None else [0.0] * len(hidden)
        if len(dropout) != len(hidden):
            raise ValueError("one dropout rate per layer")
        return cls(tuple(LayerSpec(kind, int(h), float(p)) for h, p in zip(hidden, dropout)), input_size, seq_len)

    @property
    def kind(self) -> str:
        kinds = {layer.kind for layer in self.layers}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def input_sizes(self) -> list[int]:
        return [self.input_size] + [layer.hidden for layer in self.layers[:-1]]

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "seq_len": self.seq_len,
            "layers": [{"kind": la.kind, "hidden": la.hidden, "dropout": la.dropout} for la in self.layers],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(tuple(LayerSpec(**la) for la in d["layers"]), d["input_size"], d["seq_len"])


@dataclass
class CellParams:
    kind: str
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        g = len(GATES[self.kind])
        n_in, gh = self.W.shape
        h = gh // g
        if gh != g * h or self.U.shape != (h, gh) or self.b.shape != (gh,):
            raise ShapeError(
                f"{self.kind} cell shapes inconsistent: W {self.W.shape}, U {self.U.shape}, b {self.b.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_g, U_g, b_g)`` of a single gate."""
        k = GATES[self.kind].index(name)
        h = self.hidden_size
        cols = slice(k * h, (k + 1) * h)
        return self.W[:, cols], self.U[:, cols], self.b[cols]


@dataclass
class Model:
    spec: NetworkSpec
    cells: list[CellParams]
    head_w: np.ndarray  # (hidden_top,)
    head_b: np.ndarray  # 0-d

    def params(self) -> dict[str, np.ndarray]:
        """Name -> array references (mutating them mutates the model)."""
        out = {}
        for k, cell in enumerate(self.cells):
            out[f"layers.{k}.W"] = cell.W
            out[f"layers.{k}.U"] = cell.U
            out[f"layers.{k}.b"] = cell.b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def copy(self) -> "Model":
        cells = [CellParams(c.kind, c.W.copy(), c.U.copy(), c.b.copy()) for c in self.cells]
        return Model(self.spec, cells, self.head_w.copy(), self.head_b.copy())

    def load_params(self, values: Mapping[str, np.ndarray]) -> None:
        for name, arr in self.params().items():
            arr[...] = values[name]

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "Model":
        cells = []
        for layer, n_in in zip(spec.layers, spec.input_sizes()):
            g, h = len(GATES[layer.kind]), layer.hidden
            cells.append(CellParams(layer.kind, np.zeros((n_in, g * h)), np.zeros((h, g * h)), np.zeros(g * h)))
        return cls(spec, cells, np.zeros(spec.layers[-1].hidden), np.array(0.0))


def init_params(spec: NetworkSpec, seed: int) -> Model:
    """Glorot-uniform weights per gate, zero biases, LSTM forget bias 1."""
    rng = np.random.default_rng(seed)
    model = Model.zeros(spec)
    for cell in model.cells:
        h = cell.hidden_size
        bound_w = np.sqrt(6.0 / (cell.input_size + h))
        bound_u = np.sqrt(6.0 / (h + h))
        cell.W[...] = rng.uniform(-bound_w, bound_w, cell.W.shape)
        cell.U[...] = rng.uniform(-bound_u, bound_u, cell.U.shape)
        if cell.kind == "lstm":
            cell.b[h : 2 * h] = 1.0
    h_top = spec.layers[-1].hidden
    bound = np.sqrt(6.0 / (h_top + 1))
    model.head_w[...] = rng.uniform(-bound, bound, h_top)
    return model


# --------------------------------------------------------------------------- single steps


def _lstm_step(U, ax, hp, cp):
    h = hp.shape[-1]
    a = ax + hp @ U
    ifo = sigmoid(a[..., : 3 * h])
    g = np.tanh(a[..., 3 * h :])
    c = ifo[..., h : 2 * h] * cp + ifo[..., :h] * g
    tc = np.tanh(c)
    return ifo[..., 2 * h :] * tc, c, ifo, g, tc


def _gru_step(U, ax, hp):
    h = hp.shape[-1]
    zr = sigmoid(ax[..., : 2 * h] + hp @ U[:, : 2 * h])
    r = zr[..., h:]
    n = np.tanh(ax[..., 2 * h :] + (r * hp) @ U[:, 2 * h :])
    z = zr[..., :h]
    return (1.0 - z) * hp + z * n, zr, n


def _srn_step(U, ax, hp):
    return np.tanh(ax + hp @ U)


def cell_forward(kind: str, params: CellParams, x_t, h_prev, c_prev=None):
    """One time step. Returns ``(h_t, c_t, cache)``; ``c_t`` is None except for LSTM."""
    if kind != params.kind:
        raise ShapeError(f"cell kind {kind!r} does not match params {params.kind!r}")
    x_t, h_prev = np.asarray(x_t, float), np.asarray(h_prev, float)
    if x_t.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise ShapeError(f"x {x_t.shape} / h {h_prev.shape} incompatible with cell {params.W.shape}")
    ax = x_t @ params.W + params.b
    if kind == "lstm":
        if c_prev is None:
            raise ShapeError("LSTM step needs c_prev")
        c_prev = np.asarray(c_prev, float)
        h, c, ifo, g, tc = _lstm_step(params.U, ax, h_prev, c_prev)
        return h, c, {"ifo": ifo, "g": g, "tc": tc, "h_prev": h_prev, "c_prev": c_prev}
    if c_prev is not None:
        raise ShapeError(f"{kind} cell has no cell state")
    if kind == "gru":
        h, zr, n = _gru_step(params.U, ax, h_prev)
        return h, None, {"zr": zr, "n": n, "h_prev": h_prev}
    h = _srn_step(params.U, ax, h_prev)
    return h, None, {"h_prev": h_prev}


# --------------------------------------------------------------------------- layers


@dataclass
class LayerTape:
    inputs: np.ndarray  # (B, T, in) as fed to this layer
    H: np.ndarray  # (B, T, h) hidden outputs before dropout
    acts: dict  # per-kind cached activations over all steps
    mask: np.ndarray | None  # inverted-dropout mask on H, or None


@dataclass
class TapeState:
    spec: NetworkSpec
    layers: list[LayerTape]
    h_top: np.ndarray  # (B, h_top) as fed to the head (post-dropout)
    batched: bool
    shapes: tuple = field(default=())


def _check_finite(H: np.ndarray, layer: int) -> None:
    if not np.isfinite(H).all():
        bad = np.argwhere(~np.isfinite(H))[0]
        raise NumericalError(f"non-finite activation in layer {layer} at step {int(bad[1])}")


def _layer_forward(cell: CellParams, seq: np.ndarray) -> tuple[np.ndarray, dict]:
    B, T, _ = seq.shape
    h = cell.hidden_size
    pre = seq @ cell.W + cell.b
    H = np.empty((B, T, h))
    hp = np.zeros((B, h))
    if cell.kind == "lstm":
        C = np.empty((B, T, h))
        IFO = np.empty((B, T, 3 * h))
        G = np.empty((B, T, h))
        TC = np.empty((B, T, h))
        cp = np.zeros((B, h))
        for t in range(T):
            hp, cp, IFO[:, t], G[:, t], TC[:, t] = _lstm_step(cell.U, pre[:, t], hp, cp)
            H[:, t], C[:, t] = hp, cp
        return H, {"C": C, "IFO": IFO, "G": G, "TC": TC}
    if cell.kind == "gru":
        ZR = np.empty((B, T, 2 * h))
        N = np.empty((B, T, h))
        for t in range(T):
            hp, ZR[:, t], N[:, t] = _gru_step(cell.U, pre[:, t], hp)
            H[:, t] = hp
        return H, {"ZR": ZR, "N": N}
    for t in range(T):
        hp = _srn_step(cell.U, pre[:, t], hp)
        H[:, t] = hp
    return H, {}


def _shift(H: np.ndarray) -> np.ndarray:
    """Previous-step states: zeros at t=0, then H[:, :-1]."""
    out = np.zeros_like(H)
    out[:, 1:] = H[:, :-1]
    return out


def _batch_outer(A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """sum_b A[b].T @ D[b]: per-sample products first, then one reduction over the batch."""
    return np.matmul(A.transpose(0, 2, 1), D).sum(axis=0)


def _layer_backward(cell: CellParams, tape: LayerTape, dH: np.ndarray):
    """Gradients of the layer given dLoss/dH (pre-dropout). Returns (dX, dW, dU, db)."""
    B, T, h = tape.H.shape
    U = cell.U
    Hprev = _shift(tape.H)
    if cell.kind == "lstm":
        IFO, G, TC, C = tape.acts["IFO"], tape.acts["G"], tape.acts["TC"], tape.acts["C"]
        Cprev = _shift(C)
        dA = np.empty((B, T, 4 * h))
        UT = U.T
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            i, f, o = IFO[:, t, :h], IFO[:, t, h : 2 * h], IFO[:, t, 2 * h :]
            g, tc = G[:, t], TC[:, t]
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = dA[:, t]
            da[:, :h] = dc * g * i * (1.0 - i)
            da[:, h : 2 * h] = dc * Cprev[:, t] * f * (1.0 - f)
            da[:, 2 * h : 3 * h] = dh * tc * o * (1.0 - o)
            da[:, 3 * h :] = dc * i * (1.0 - g * g)
            dh_next = da @ UT
            dc_next = dc * f
        dU = _batch_outer(Hprev, dA)
    elif cell.kind == "gru":
        ZR, N = tape.acts["ZR"], tape.acts["N"]
        dA = np.empty((B, T, 3 * h))
        Uzr_T = U[:, : 2 * h].T
        Un_T = U[:, 2 * h :].T
        dh_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            z, r, n, hp = ZR[:, t, :h], ZR[:, t, h:], N[:, t], Hprev[:, t]
            dh = dH[:, t] + dh_next
            da = dA[:, t]
            da_n = dh * z * (1.0 - n * n)
            drh = da_n @ Un_T
            da[:, :h] = dh * (n - hp) * z * (1.0 - z)
            da[:, h : 2 * h] = drh * hp * r * (1.0 - r)
            da[:, 2 * h :] = da_n
            dh_next = dh * (1.0 - z) + drh * r + da[:, : 2 * h] @ Uzr_T
        R = ZR[:, :, h:]
        dU = np.concatenate([_batch_outer(Hprev, dA[:, :, : 2 * h]), _batch_outer(R * Hprev, dA[:, :, 2 * h :])], axis=1)
    else:
        dA = np.empty((B, T, h))
        UT = U.T
        dh_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            ht = tape.H[:, t]
            dA[:, t] = (dH[:, t] + dh_next) * (1.0 - ht * ht)
            dh_next = dA[:, t] @ UT
        dU = _batch_outer(Hprev, dA)
    dW = _batch_outer(tape.inputs, dA)
    db = dA.sum(axis=1).sum(axis=0)
    dX = dA @ cell.W.T
    return dX, dW, dU, db


# --------------------------------------------------------------------------- network


def forward(model: Model, X, training: bool = False, rng: np.random.Generator | None = None):
    """Run the network on ``X`` of shape (T, input) or (B, T, input).

    Returns ``(output, tape)`` where output is a float for a single sequence
    and a (B,) array for a batch.
    """
    X = np.asarray(X, dtype=float)
    batched = X.ndim == 3
    if not batched:
        X = X[None]
    spec = model.spec
    if X.ndim != 3 or X.shape[1:] != (spec.seq_len, spec.input_size):
        raise ShapeError(f"expected input (T={spec.seq_len}, {spec.input_size}), got {X.shape[-2:]}")
    seq = X
    tapes = []
    for k, (layer, cell) in enumerate(zip(spec.layers, model.cells)):
        H, acts = _layer_forward(cell, seq)
        _check_finite(H, k)
        mask = None
        if training and layer.dropout > 0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            keep = 1.0 - layer.dropout
            mask = (rng.random(H.shape) < keep) / keep
            seq_out = H * mask
        else:
            seq_out = H
        tapes.append(LayerTape(seq, H, acts, mask))
        seq = seq_out
    h_top = seq[:, -1, :]
    y = h_top @ model.head_w + model.head_b
    tape = TapeState(spec, tapes, h_top, batched, tuple(a.shape for a in model.params().values()))
    return (y if batched else float(y[0])), tape


def backward(model: Model, tape: TapeState, d_output) -> dict[str, np.ndarray]:
    """Exact BPTT. ``d_output`` is dLoss/dOutput: a scalar, or (B,) for a batch.

    Gradients are summed over the batch.
    """
    shapes = tuple(a.shape for a in model.params().values())
    if tape.spec != model.spec or tape.shapes != shapes:
        raise ShapeError("tape was produced by a different model")
    B = tape.h_top.shape[0]
    d = np.asarray(d_output, dtype=float).reshape(-1)
    if d.shape != (B,):
        raise ShapeError(f"d_output must have {B} entries, got {d.shape}")
    grads: dict[str, np.ndarray] = {}
    grads["head.w"] = (tape.h_top * d[:, None]).sum(axis=0)
    grads["head.b"] = np.array(d.sum())
    top = tape.layers[-1]
    dseq = np.zeros_like(top.H)
    dseq[:, -1, :] = np.outer(d, model.head_w)
    for k in range(len(model.cells) - 1, -1, -1):
        lt = tape.layers[k]
        dH = dseq * lt.mask if lt.mask is not None else dseq
        dseq, dW, dU, db = _layer_backward(model.cells[k], lt, dH)
        grads[f"layers.{k}.W"] = dW
        grads[f"layers.{k}.U"] = dU
        grads[f"layers.{k}.b"] = db
    return {name: grads[name] for name in model.params()}


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, model: Model, seed: int, scalers: Mapping | None = None, meta: Mapping | None = None) -> Path:
    """JSON text checkpoint; floats are written with ``repr`` so they round-trip exactly."""
    params = {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()} for name, arr in model.params().items()}
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "seed": seed,
        "scalers": dict(scalers or {}),
        "meta": dict(meta or {}),
        "params": params,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Returns the model and the full checkpoint document (seed, scalers, meta)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema_version')!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    model = Model.zeros(spec)
    values = {}
    for name, arr in model.params().items():
        entry = doc["params"][name]
        if tuple(entry["shape"]) != arr.shape:
            raise ShapeError(f"{path}: {name} has shape {entry['shape']}, spec wants {arr.shape}")
        values[name] = np.array(entry["data"], dtype=float).reshape(arr.shape)
    model.load_params(values)
    return model, doc
