"""Builders, trainers, and predictors for the neural disaggregation families.

Window-to-target mapping per family:

* ``fcnn``, ``seq2point`` - centered window -> appliance power at the center.
* ``rnn_gru``, ``lstm``, ``window_gru`` - trailing window -> power at its
  last sample (causal alignment).
* ``dae``, ``seq2seq`` - centered window -> the full appliance window;
  overlapping predictions are averaged back into a series.

All training happens in z-scored space (statistics fitted on the training
split only); predictions are mapped back to watts and clamped at zero.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, TrainingDiverged
from .metrics import mae
from .timeseries import AlignedDataset, PowerSeries, destandardize, make_windows, standardize

NEURAL_FAMILIES = ("fcnn", "dae", "rnn_gru", "window_gru", "lstm", "seq2point", "seq2seq")
GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class NetworkSpec:
    """Hyperparameters for one neural disaggregator."""

    family: str
    window: int
    num_layers: int = 5
    hidden: int = 64
    dropout: float = 0.2
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    loss: str = "mse"
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    stacked: int = 1
    conv_channels: tuple = (16, 32)
    kernel: int = 5

    def __post_init__(self):
        if self.family not in NEURAL_FAMILIES:
            raise DataError(f"unknown neural family {self.family!r}")
        if self.window < 1 or self.epochs < 1 or self.batch_size < 1:
            raise DataError("window, epochs, and batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must be in [0, 1)")
        if self.stacked not in (1, 2):
            raise DataError("recurrent stacking is capped at 2 cells")
        if self.loss not in ("mse", "mae"):
            raise DataError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("adam", "nadam"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if self.num_layers < 1:
            raise DataError("num_layers must be >= 1")


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


class _FeedForward:
    """Dense/conv stack over (batch, window) inputs."""

    def __init__(self, layers, out_dim: int, to_channels: bool = False):
        self.layers = layers
        self.out_dim = out_dim
        self.to_channels = to_channels

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def forward(self, x: ad.Tensor, tape, mode: str, rng) -> ad.Tensor:
        if self.to_channels:
            x = ad.reshape(tape, x, (*x.data.shape, 1))
        for layer in self.layers:
            if isinstance(layer, _Flatten):
                x = ad.reshape(tape, x, (x.data.shape[0], -1))
            else:
                x = layer.forward(x, tape, mode=mode, rng=rng)
        return x


class _Flatten:
    params = ()


class _Recurrent:
    """Stacked GRU or LSTM cells over (batch, time) inputs; emits the last
    hidden state through a dense head."""

    def __init__(self, kind: str, stacked: int, units: int, dropout: float, rng):
        self.kind = kind
        self.units = units
        cell_cls = ad.GRUCell if kind == "gru" else ad.LSTMCell
        self.cells = [cell_cls(1 if i == 0 else units, units, rng, name=f"{kind}{i}")
                      for i in range(stacked)]
        self.mid_drop = ad.Dropout(dropout)
        self.head_drop = ad.Dropout(dropout)
        self.head = ad.Dense(units, 1, rng, name="head")

    @property
    def params(self):
        out = [p for c in self.cells for p in c.params]
        return out + self.head.params

    def forward(self, x: ad.Tensor, tape, mode: str, rng) -> ad.Tensor:
        B, T = x.data.shape
        hs = [ad.Tensor(np.zeros((B, self.units))) for _ in self.cells]
        cs = [ad.Tensor(np.zeros((B, self.units))) for _ in self.cells]
        for t in range(T):
            inp = ad.Tensor(x.data[:, t:t + 1])
            for level, cell in enumerate(self.cells):
                if level > 0:
                    inp = self.mid_drop.forward(inp, tape, mode=mode, rng=rng)
                if self.kind == "gru":
                    hs[level] = cell.step(inp, hs[level], tape)
                else:
                    hs[level], cs[level] = cell.step(inp, hs[level], cs[level], tape)
                inp = hs[level]
        top = self.head_drop.forward(hs[-1], tape, mode=mode, rng=rng)
        return self.head.forward(top, tape, mode=mode, rng=rng)

    out_dim = 1


def build_network(spec: NetworkSpec):
    """Instantiate a family's network with seed-deterministic parameters."""
    rng = np.random.default_rng(spec.seed)
    w, h, p = spec.window, spec.hidden, spec.dropout
    if spec.family == "fcnn":
        layers, d = [], w
        for i in range(spec.num_layers):
            layers += [ad.Dense(d, h, rng, name=f"fc{i}"), ad.Activation("relu"),
                       ad.Dropout(p)]
            d = h
        layers.append(ad.Dense(d, 1, rng, name="head"))
        return _FeedForward(layers, 1)
    if spec.family == "dae":
        enc = max(1, (spec.num_layers - 1) // 2)
        dec = max(1, spec.num_layers - 1 - enc)
        bottleneck = max(1, h // 4)
        layers, d = [], w
        for i in range(enc):
            layers += [ad.Dense(d, h, rng, name=f"enc{i}"), ad.Activation("relu"),
                       ad.Dropout(p)]
            d = h
        layers += [ad.Dense(d, bottleneck, rng, name="code"), ad.Activation("relu")]
        d = bottleneck
        for i in range(dec):
            layers += [ad.Dense(d, h, rng, name=f"dec{i}"), ad.Activation("relu"),
                       ad.Dropout(p)]
            d = h
        layers.append(ad.Dense(d, w, rng, name="head"))
        return _FeedForward(layers, w)
    if spec.family in ("seq2point", "seq2seq"):
        c1, c2 = spec.conv_channels
        out_dim = 1 if spec.family == "seq2point" else w
        layers = [
            ad.Conv1d(1, c1, spec.kernel, rng, padding="same", name="conv0"),
            ad.Activation("relu"),
            ad.Conv1d(c1, c2, spec.kernel, rng, padding="same", name="conv1"),
            ad.Activation("relu"),
            _Flatten(),
            ad.Dense(w * c2, h, rng, name="fc"),
            ad.Activation("relu"),
            ad.Dropout(p),
            ad.Dense(h, out_dim, rng, name="head"),
        ]
        return _FeedForward(layers, out_dim, to_channels=True)
    if spec.family in ("rnn_gru", "window_gru", "lstm"):
        kind = "lstm" if spec.family == "lstm" else "gru"
        stacked = 1 if spec.family == "window_gru" else spec.stacked
        return _Recurrent(kind, stacked, h, p, rng)
    raise DataError(f"unknown neural family {spec.family!r}")


def parameter_count(net) -> int:
    return sum(p.data.size for p in net.params)


def _trailing_windows(values: np.ndarray, window: int) -> np.ndarray:
    """Row t is the window of samples ending at t, zero-padded on the left."""
    padded = np.concatenate([np.zeros(window - 1), values])
    return np.lib.stride_tricks.sliding_window_view(padded, window).copy()


def _family_windows(family: str, values: np.ndarray, window: int) -> np.ndarray:
    if family in ("rnn_gru", "window_gru", "lstm"):
        return _trailing_windows(values, window)
    mat, _ = make_windows(values, window, stride=1, pad="zero")
    return mat


def _family_targets(family: str, values: np.ndarray, window: int) -> np.ndarray:
    if family in ("dae", "seq2seq"):
        mat, _ = make_windows(values, window, stride=1, pad="zero")
        return mat
    return values[:, None]


def overlap_average(window_outputs, centers, stride: int, length: int) -> np.ndarray:
    """Average overlapping window estimates into one series.

    ``output[t]`` is the mean of every window cell whose absolute position
    is ``t``; window i covers positions starting at ``centers[i] - w // 2``.
    Every index in [0, length) must be covered.
    """
    mat = np.asarray(window_outputs, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    if mat.ndim != 2 or mat.shape[0] != centers.size:
        raise DataError("overlap_average: one center per window row required")
    w = mat.shape[1]
    pos = (centers[:, None] - w // 2 + np.arange(w)[None, :]).ravel()
    vals = mat.ravel()
    ok = (pos >= 0) & (pos < length)
    counts = np.bincount(pos[ok], minlength=length)
    if np.any(counts == 0):
        raise DataError("overlap_average: uncovered output index")
    sums = np.bincount(pos[ok], weights=vals[ok], minlength=length)
    return sums / counts


@dataclass
class FittedNetwork:
    """A trained network plus the normalization it was trained under."""

    spec: NetworkSpec
    net: object
    target_label: str
    agg_mean: float = float("nan")
    agg_std: float = float("nan")
    app_mean: float = float("nan")
    app_std: float = float("nan")

    @property
    def is_fitted(self) -> bool:
        return np.isfinite(self.agg_mean)


def _forward_batches(net, X: np.ndarray, batch: int = 4096) -> np.ndarray:
    outs = []
    for lo in range(0, X.shape[0], batch):
        t = ad.Tensor(X[lo:lo + batch])
        outs.append(net.forward(t, None, mode="eval", rng=None).data)
    return np.concatenate(outs, axis=0)


def train(net, train_ds: AlignedDataset, val_ds: AlignedDataset,
          spec: NetworkSpec, target_label: str) -> tuple[FittedNetwork, TrainingHistory]:
    """Fixed-epoch minibatch training against one appliance channel.

    No early stopping; per-epoch validation MAE is computed in watts.
    Raises TrainingDiverged on a non-finite loss.
    """
    if len(train_ds) < 2:
        raise DataError("training split too small")
    agg_n, agg_mean, agg_std = standardize(train_ds.aggregate.values)
    app_raw = train_ds.appliance(target_label).values
    app_n, app_mean, app_std = standardize(app_raw)

    X = _family_windows(spec.family, agg_n, spec.window)
    Y = _family_targets(spec.family, app_n, spec.window)
    fitted = FittedNetwork(spec, net, target_label, agg_mean, agg_std, app_mean, app_std)

    rng = np.random.default_rng(spec.seed + 1)
    state = ad.OptimizerState(variant=spec.optimizer, lr=spec.learning_rate)
    params = net.params
    history = TrainingHistory()
    n = X.shape[0]
    for epoch in range(spec.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, spec.batch_size):
            idx = perm[lo:lo + spec.batch_size]
            tape = ad.Tape()
            pred = net.forward(ad.Tensor(X[idx]), tape, mode="train", rng=rng)
            target = ad.Tensor(Y[idx].reshape(pred.data.shape))
            loss_t = ad.loss(spec.loss, pred, target, tape)
            loss_val = float(loss_t.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"{spec.family}: non-finite loss at epoch {epoch} batch {lo // spec.batch_size}")
            grad_map = ad.backward(tape, loss_t)
            grads = [grad_map.get(p, np.zeros_like(p.data)) for p in params]
            ad.clip_global_norm(grads, GRAD_CLIP_NORM)
            ad.optimizer_step(state, params, grads)
            epoch_loss += loss_val * idx.size
        history.train_loss.append(epoch_loss / n)
        val_pred = predict_series(fitted, val_ds.aggregate)
        history.val_mae.append(mae(val_ds.appliance(target_label).values, val_pred.values))
    return fitted, history


def predict_series(fitted: FittedNetwork, aggregate: PowerSeries) -> PowerSeries:
    """Disaggregate one aggregate series; output shares its grid and label
    matches the trained target."""
    if not fitted.is_fitted:
        raise DataError("network is missing standardization parameters; fit first")
    spec = fitted.spec
    values = (aggregate.values - fitted.agg_mean) / fitted.agg_std
    X = _family_windows(spec.family, values, spec.window)
    out = _forward_batches(fitted.net, X)
    if spec.family in ("dae", "seq2seq"):
        centers = np.arange(len(aggregate))
        series_n = overlap_average(out, centers, 1, len(aggregate))
    else:
        series_n = out[:, 0]
    watts = destandardize(series_n, fitted.app_mean, fitted.app_std)
    return PowerSeries(aggregate.start_time, aggregate.period,
                       np.maximum(watts, 0.0), fitted.target_label)


def fit_family(spec: NetworkSpec, train_ds: AlignedDataset, val_ds: AlignedDataset,
               target_label: str) -> tuple[FittedNetwork, TrainingHistory]:
    net = build_network(spec)
    return train(net, train_ds, val_ds, spec, target_label)


# ---------------------------------------------------------------------------
# parameter serialization


FORMAT_TAG = "wattsplit-net v1"

_SPEC_FIELDS = ("family", "window", "num_layers", "hidden", "dropout", "optimizer",
                "learning_rate", "loss", "epochs", "batch_size", "seed", "stacked",
                "conv_channels", "kernel")


def save_network(fitted: FittedNetwork, stream) -> None:
    """Versioned flat text dump: spec header, then one shape line and one
    row-major value line per parameter."""
    w = stream.write
    w(FORMAT_TAG + "\n")
    for name in _SPEC_FIELDS:
        w(f"spec {name} {getattr(fitted.spec, name)!r}\n")
    w(f"target {fitted.target_label}\n")
    w(f"norm {fitted.agg_mean!r} {fitted.agg_std!r} {fitted.app_mean!r} {fitted.app_std!r}\n")
    for p in fitted.net.params:
        w(f"param {p.name} {' '.join(str(d) for d in p.data.shape)}\n")
        w(" ".join(repr(float(v)) for v in p.data.reshape(-1)) + "\n")


def load_network(stream) -> FittedNetwork:
    lines = iter(stream.read().splitlines())
    if next(lines, None) != FORMAT_TAG:
        raise DataError("unrecognized network file format")
    spec_kw: dict = {}
    target = ""
    norm = (float("nan"),) * 4
    params = []
    for line in lines:
        key, _, rest = line.partition(" ")
        if key == "spec":
            name, _, value = rest.partition(" ")
            spec_kw[name] = ast.literal_eval(value)
        elif key == "target":
            target = rest
        elif key == "norm":
            norm = tuple(float(v) for v in rest.split())
        elif key == "param":
            name, *shape = rest.split()
            values = next(lines)
            arr = np.array([float(v) for v in values.split()])
            params.append((name, arr.reshape([int(s) for s in shape])))
        else:
            raise DataError(f"unknown network file field {key!r}")
    spec = NetworkSpec(**spec_kw)
    net = build_network(spec)
    by_name = {p.name: p for p in net.params}
    if set(by_name) != {name for name, _ in params}:
        raise DataError("parameter table does not match the rebuilt network")
    for name, arr in params:
        if by_name[name].data.shape != arr.shape:
            raise DataError(f"shape mismatch for parameter {name!r}")
        by_name[name].data = arr
    return FittedNetwork(spec, net, target, *norm)
