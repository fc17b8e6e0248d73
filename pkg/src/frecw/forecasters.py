"""Differentiable forecasting models and their training loop.

Two model families: a linear forecaster with moving-average trend/seasonal
decomposition (weights map the L past steps to the T future steps, shared
across channels by default), and a one-hidden-layer perceptron baseline.
Both expose graph-building forwards so attacks can take gradients with
respect to the input while parameters stay frozen.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import engine
from .data import NormStats
from .engine import AdamState, DiffNode, Tensor2

__all__ = [
    "Forecaster",
    "LinearForecaster",
    "MLPForecaster",
    "make_forecaster",
    "moving_average_matrix",
    "train",
    "TrainEpoch",
    "input_gradient",
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]

MA_KERNEL_DEFAULT = 25
MLP_HIDDEN_DEFAULT = 128


@lru_cache(maxsize=None)
def moving_average_matrix(length, kernel):
    """Row-stochastic matrix applying a length-``kernel`` moving average
    along the time axis, with edge replication padding."""
    if kernel < 1:
        raise ValueError("kernel must be >= 1")
    front = (kernel - 1) // 2
    mat = np.zeros((length, length))
    w = 1.0 / kernel
    for t in range(length):
        for offset in range(-front, kernel - front):
            j = min(max(t + offset, 0), length - 1)
            mat[t, j] += w
    mat.flags.writeable = False
    return mat


def _frozen(arr):
    out = np.array(arr, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


class Forecaster:
    """Base class: maps an L x M history to a T x M forecast."""

    kind = "base"

    def __init__(self, input_len, horizon, n_channels, channel_mode="shared"):
        if channel_mode not in ("shared", "per-channel"):
            raise ValueError(f"unknown channel_mode {channel_mode!r}")
        self.input_len = int(input_len)
        self.horizon = int(horizon)
        self.n_channels = int(n_channels)
        self.channel_mode = channel_mode
        self.params = {}

    # subclasses: build the forward graph from a single L x M input node
    def forward_node(self, x, param_nodes=None):
        raise NotImplementedError

    # subclasses: (inputs, truths) stacked for one optimizer step
    def stack_batch(self, windows):
        raise NotImplementedError

    def batched_forward_node(self, x, param_nodes=None):
        raise NotImplementedError

    def _check_input(self, x):
        expect = (self.input_len, self.n_channels)
        if x.value.shape != expect:
            raise ValueError(
                f"{self.kind} forward: input shape {x.value.shape}, "
                f"expected {expect}"
            )

    def forward(self, x):
        """Plain forecast of one window, returned as a Tensor2."""
        node = self.forward_node(engine.leaf(x))
        return Tensor2(node.value)

    def with_params(self, params):
        """Copy of this model with replaced parameter tensors."""
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: _frozen(v) for k, v in params.items()}
        return clone

    def param_checksum(self):
        return float(sum(np.abs(v).sum() for v in self.params.values()))

    def hyperparameters(self):
        raise NotImplementedError


class LinearForecaster(Forecaster):
    """Trend/seasonal decomposition followed by one linear map each.

    The trend is a centered moving average with edge replication; the
    seasonal part is the residual. In shared mode a single pair of T x L
    weight matrices applies to every channel; per-channel mode keeps an
    independent pair per channel. Both weight matrices start as uniform
    averages (every entry 1/L) so the initial model predicts the window
    mean, and the whole forward map is linear in the input.
    """

    kind = "linear"

    def __init__(self, input_len, horizon, n_channels, channel_mode="shared",
                 kernel=MA_KERNEL_DEFAULT):
        super().__init__(input_len, horizon, n_channels, channel_mode)
        self.kernel = int(kernel)
        init = np.full((self.horizon, self.input_len), 1.0 / self.input_len)
        if channel_mode == "shared":
            self.params = {"w_trend": _frozen(init), "w_seasonal": _frozen(init)}
        else:
            self.params = {}
            for c in range(self.n_channels):
                self.params[f"w_trend/{c}"] = _frozen(init)
                self.params[f"w_seasonal/{c}"] = _frozen(init)

    def hyperparameters(self):
        return {"kernel": self.kernel}

    def _param_node(self, param_nodes, name):
        if param_nodes is not None:
            return param_nodes[name]
        return engine.constant(self.params[name])

    def _apply(self, x, param_nodes, wt_name, ws_name):
        ma = engine.constant(moving_average_matrix(self.input_len, self.kernel))
        trend = engine.matmul(ma, x)
        seasonal = engine.sub(x, trend)
        wt = self._param_node(param_nodes, wt_name)
        ws = self._param_node(param_nodes, ws_name)
        return engine.add(engine.matmul(wt, trend), engine.matmul(ws, seasonal))

    def forward_node(self, x, param_nodes=None):
        self._check_input(x)
        return self._batched(x, param_nodes)

    def _batched(self, x, param_nodes):
        if x.value.shape[0] != self.input_len:
            raise ValueError(
                f"linear forward: {x.value.shape[0]} rows, expected {self.input_len}"
            )
        if self.channel_mode == "shared":
            return self._apply(x, param_nodes, "w_trend", "w_seasonal")
        n_cols = x.value.shape[1]
        if n_cols % self.n_channels:
            raise ValueError(
                f"per-channel forward: {n_cols} columns not a multiple of "
                f"{self.n_channels} channels"
            )
        outs = []
        for c in range(self.n_channels):
            cols = list(range(c, n_cols, self.n_channels))
            xc = engine.gather_cols(x, cols)
            outs.append(self._apply(xc, param_nodes, f"w_trend/{c}", f"w_seasonal/{c}"))
        # reassemble interleaved channel columns in original order
        stacked = engine.concat_cols(outs)
        n_windows = n_cols // self.n_channels
        order = []
        for w in range(n_windows):
            for c in range(self.n_channels):
                order.append(c * n_windows + w)
        return engine.gather_cols(stacked, order)

    def batched_forward_node(self, x, param_nodes=None):
        return self._batched(x, param_nodes)

    def stack_batch(self, windows):
        x = np.hstack([w.input.array for w in windows])
        y = np.hstack([w.truth.array for w in windows])
        return x, y


class MLPForecaster(Forecaster):
    """One-hidden-layer perceptron over the flattened window.

    Exists to show the attacks are model agnostic; max(0, .) nonlinearity,
    seeded uniform initialization scaled by fan-in.
    """

    kind = "mlp"

    def __init__(self, input_len, horizon, n_channels, channel_mode="shared",
                 hidden=MLP_HIDDEN_DEFAULT, seed=0):
        super().__init__(input_len, horizon, n_channels, channel_mode)
        self.hidden = int(hidden)
        rng = np.random.default_rng(seed)
        d_in = self.input_len * self.n_channels
        d_out = self.horizon * self.n_channels
        b1 = 1.0 / np.sqrt(d_in)
        b2 = 1.0 / np.sqrt(self.hidden)
        self.params = {
            "w1": _frozen(rng.uniform(-b1, b1, size=(self.hidden, d_in))),
            "b1": _frozen(np.zeros((self.hidden, 1))),
            "w2": _frozen(rng.uniform(-b2, b2, size=(d_out, self.hidden))),
            "b2": _frozen(np.zeros((d_out, 1))),
        }

    def hyperparameters(self):
        return {"hidden": self.hidden}

    def _param_node(self, param_nodes, name):
        if param_nodes is not None:
            return param_nodes[name]
        return engine.constant(self.params[name])

    def forward_node(self, x, param_nodes=None):
        self._check_input(x)
        flat = engine.reshape(x, self.input_len * self.n_channels, 1)
        out = self.batched_forward_node(flat, param_nodes)
        return engine.reshape(out, self.horizon, self.n_channels)

    def batched_forward_node(self, x, param_nodes=None):
        if x.value.shape[0] != self.input_len * self.n_channels:
            raise ValueError(
                f"mlp forward: {x.value.shape[0]} rows, expected "
                f"{self.input_len * self.n_channels}"
            )
        w1 = self._param_node(param_nodes, "w1")
        b1 = self._param_node(param_nodes, "b1")
        w2 = self._param_node(param_nodes, "w2")
        b2 = self._param_node(param_nodes, "b2")
        h = engine.relu(engine.add_bias(engine.matmul(w1, x), b1))
        return engine.add_bias(engine.matmul(w2, h), b2)

    def stack_batch(self, windows):
        x = np.stack([w.input.array.reshape(-1) for w in windows], axis=1)
        y = np.stack([w.truth.array.reshape(-1) for w in windows], axis=1)
        return x, y


def make_forecaster(kind, input_len, horizon, n_channels,
                    channel_mode="shared", seed=0, **extra):
    if kind == "linear":
        return LinearForecaster(input_len, horizon, n_channels, channel_mode,
                                kernel=extra.get("kernel", MA_KERNEL_DEFAULT))
    if kind == "mlp":
        return MLPForecaster(input_len, horizon, n_channels, channel_mode,
                             hidden=extra.get("hidden", MLP_HIDDEN_DEFAULT),
                             seed=seed)
    raise ValueError(f"unknown forecaster kind {kind!r}")


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainEpoch:
    epoch: int
    train_mse: float
    val_mae: float
    val_mse: float


def _eval_split(model, params, windows):
    if not windows:
        return float("nan"), float("nan")
    x, y = model.stack_batch(windows)
    param_nodes = {k: engine.constant(v) for k, v in params.items()}
    out = model.batched_forward_node(engine.constant(x), param_nodes)
    diff = out.value - y
    return float(np.abs(diff).mean()), float((diff * diff).mean())


def train(model, train_windows, val_windows, *, epochs=20, lr=1e-3,
          batch_size=64, seed=0):
    """Minimize forecast MSE with Adam; returns (trained model, history).

    Each epoch walks the full training window set in a seeded shuffled
    order, one Adam step per minibatch. The returned model carries the
    parameters of the epoch with the best validation MSE (final parameters
    when there are no validation windows). Fully deterministic given the
    seed; zero epochs returns the model untouched.
    """
    if not train_windows:
        raise ValueError("train: need at least one training window")
    if epochs == 0:
        return model, []
    rng = np.random.default_rng(seed)
    params = {k: v.copy() for k, v in model.params.items()}
    states = {k: AdamState.init(v.shape) for k, v in params.items()}
    history = []
    best_val = np.inf
    best_params = None
    n = len(train_windows)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            batch = [train_windows[i] for i in order[start : start + batch_size]]
            x, y = model.stack_batch(batch)
            param_nodes = {
                k: engine.leaf(v, requires_grad=True) for k, v in params.items()
            }
            out = model.batched_forward_node(engine.constant(x), param_nodes)
            loss = engine.mse(out, engine.constant(y))
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"window offset {start}; lower the learning rate"
                )
            engine.backward(loss)
            for k in params:
                grad = param_nodes[k].grad
                if grad is None:
                    continue
                params[k], states[k] = engine.adam_step(
                    params[k], grad, states[k], lr
                )
            epoch_losses.append(loss_val)
        val_mae, val_mse = _eval_split(model, params, val_windows)
        history.append(
            TrainEpoch(epoch, float(np.mean(epoch_losses)), val_mae, val_mse)
        )
        if val_windows and val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
    if best_params is None:
        best_params = params
    return model.with_params(best_params), history


def input_gradient(model, loss_fn, x):
    """Gradient of a scalar loss of the forecast with respect to the input.

    ``loss_fn`` maps the forecast node to a 1x1 node. Parameters enter the
    graph as constants and receive no gradient.
    """
    x_node = engine.leaf(x, requires_grad=True)
    out = model.forward_node(x_node)
    loss = loss_fn(out)
    if loss.value.shape != (1, 1):
        raise ValueError(
            f"input_gradient: loss must be scalar, got shape {loss.value.shape}"
        )
    engine.backward(loss)
    grad = x_node.grad
    if grad is None:
        grad = np.zeros_like(x_node.value)
    return Tensor2(grad)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"FCWK"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    """A trained model plus everything needed to rerun its data pipeline."""

    model: Forecaster
    norm_stats: NormStats | None
    dataset: str
    seed: int


def save_checkpoint(ckpt, path):
    """Self-describing binary: magic, version, JSON header, raw little-endian
    float64 parameter buffers. Round-trips bitwise."""
    model = ckpt.model
    manifest = [
        {"name": k, "rows": v.shape[0], "cols": v.shape[1]}
        for k, v in model.params.items()
    ]
    header = {
        "kind": model.kind,
        "input_len": model.input_len,
        "horizon": model.horizon,
        "n_channels": model.n_channels,
        "channel_mode": model.channel_mode,
        "hyper": model.hyperparameters(),
        "dataset": ckpt.dataset,
        "seed": ckpt.seed,
        "norm": None
        if ckpt.norm_stats is None
        else {
            "mean": list(ckpt.norm_stats.mean),
            "std": list(ckpt.norm_stats.std),
        },
        "params": manifest,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for k in model.params:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a forecaster checkpoint")
        head = fh.read(6)
        if len(head) != 6:
            raise CheckpointError(f"{path}: truncated header")
        version, header_len = struct.unpack("<HI", head)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}"
            )
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        params = {}
        for entry in header["params"]:
            count = entry["rows"] * entry["cols"]
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter payload")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(
                entry["rows"], entry["cols"]
            )
    model = make_forecaster(
        header["kind"],
        header["input_len"],
        header["horizon"],
        header["n_channels"],
        channel_mode=header["channel_mode"],
        **header["hyper"],
    ).with_params(params)
    norm = header["norm"]
    stats = (
        None
        if norm is None
        else NormStats(np.array(norm["mean"]), np.array(norm["std"]))
    )
    return Checkpoint(model=model, norm_stats=stats,
                      dataset=header["dataset"], seed=header["seed"])
