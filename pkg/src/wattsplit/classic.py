"""State-based disaggregators: combinatorial optimization over appliance
power levels, and an exact factorial-HMM joint Viterbi decoder.

Each appliance is a small set of power levels (level 0 is off). The joint
state over all appliances is flattened to a single index with the FIRST
appliance varying FASTEST, so ties between equally good joint states
resolve in favor of switching earlier appliances on.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError
from .timeseries import AlignedDataset, PowerSeries

EMISSION_STD_FLOOR_W = 10.0
CO_JOINT_CAP = 4096
FHMM_JOINT_CAP = 1024


@dataclass(frozen=True)
class ApplianceStateModel:
    """Power levels of one appliance, optionally with HMM dynamics."""

    label: str
    levels: np.ndarray
    transition: np.ndarray | None = None
    emission_std: np.ndarray | None = None
    initial: np.ndarray | None = None

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.size < 2 or np.any(np.diff(levels) <= 0):
            raise DataError("levels must be >= 2 strictly increasing values")
        object.__setattr__(self, "levels", levels)
        k = levels.size
        if self.transition is not None:
            tr = np.asarray(self.transition, dtype=np.float64)
            if tr.shape != (k, k) or not np.allclose(tr.sum(axis=1), 1.0, atol=1e-9):
                raise DataError("transition must be a row-stochastic k x k matrix")
            object.__setattr__(self, "transition", tr)
        if self.emission_std is not None:
            std = np.asarray(self.emission_std, dtype=np.float64)
            if std.shape != (k,) or np.any(std < EMISSION_STD_FLOOR_W - 1e-12):
                raise DataError("emission_std must be >= the variance floor per level")
            object.__setattr__(self, "emission_std", std)
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=np.float64)
            if init.shape != (k,) or abs(init.sum() - 1.0) > 1e-9 or np.any(init < 0):
                raise DataError("initial must be a length-k probability vector")
            object.__setattr__(self, "initial", init)

    @property
    def k(self) -> int:
        return self.levels.size


class JointStateSpace:
    """Bijection between per-appliance state tuples and one flat index.

    Flat order: the first appliance's index varies fastest, i.e.
    ``flat = s0 + k0 * (s1 + k1 * (s2 + ...))``.
    """

    def __init__(self, ks):
        self.ks = tuple(int(k) for k in ks)
        if not self.ks or any(k < 1 for k in self.ks):
            raise DataError("each appliance needs >= 1 state")
        self.strides = []
        acc = 1
        for k in self.ks:
            self.strides.append(acc)
            acc *= k
        self.n_states = acc

    def encode(self, states) -> int:
        if len(states) != len(self.ks):
            raise DataError("state tuple arity mismatch")
        flat = 0
        for s, k, stride in zip(states, self.ks, self.strides):
            if not 0 <= s < k:
                raise DataError("state index out of range")
            flat += s * stride
        return flat

    def decode(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.n_states:
            raise DataError("flat index out of range")
        return tuple((flat // stride) % k for k, stride in zip(self.ks, self.strides))

    def state_table(self) -> np.ndarray:
        """(n_states, n_appliances) matrix of per-appliance indices in flat order."""
        flat = np.arange(self.n_states)
        return np.stack(
            [(flat // stride) % k for k, stride in zip(self.ks, self.strides)], axis=1
        )


def _lloyd(values: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    """1-D k-means iterations; ties assign to the lowest center index."""
    uniq = np.unique(values)
    assign = None
    for _ in range(max_iter):
        dist = np.abs(values[:, None] - centers[None, :])
        new_assign = dist.argmin(axis=1)
        for c in range(centers.size):
            mask = new_assign == c
            if mask.any():
                centers[c] = values[mask].mean()
            else:
                # re-seed a starved cluster at the point farthest from its center
                far = np.abs(uniq - centers[c]).argmax()
                centers[c] = uniq[far]
                new_assign = None
                break
        if new_assign is None:
            continue
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    dist = np.abs(values[:, None] - centers[None, :])
    assign = dist.argmin(axis=1)
    sse = float(((values - centers[assign]) ** 2).sum())
    return centers, sse


def _farthest_point_centers(uniq: np.ndarray, first: float, k: int) -> np.ndarray:
    centers = [first]
    while len(centers) < k:
        dist = np.min(np.abs(uniq[:, None] - np.asarray(centers)[None, :]), axis=1)
        centers.append(float(uniq[dist.argmax()]))
    return np.asarray(centers, dtype=np.float64)


def learn_states(series: PowerSeries, k: int, seed: int, n_restarts: int = 8,
                 max_iter: int = 100) -> ApplianceStateModel:
    """Cluster one channel's readings into k power levels.

    Lloyd's 1-D k-means with farthest-point initialization; several seeded
    restarts are run and the lowest-SSE result kept, so small fixtures land
    on the globally best partition. Levels come back sorted ascending.
    """
    if k < 2:
        raise DataError("k must be >= 2")
    values = series.values[~np.isnan(series.values)]
    uniq = np.unique(values)
    if uniq.size < k:
        raise DataError(f"fewer distinct values than k ({uniq.size} < {k})")
    rng = np.random.default_rng(seed)
    n_first = min(n_restarts, uniq.size)
    firsts = rng.choice(uniq, size=n_first, replace=False)
    best_levels, best_sse = None, math.inf
    for first in firsts:
        centers = _farthest_point_centers(uniq, float(first), k)
        centers, sse = _lloyd(values, centers, max_iter)
        levels = np.sort(centers)
        if np.any(np.diff(levels) <= 0):
            continue
        if sse < best_sse:
            best_levels, best_sse = levels, sse
    if best_levels is None:
        raise DataError("k-means failed to produce distinct levels")
    return ApplianceStateModel(series.label, best_levels)


def _joint_level_sums(models) -> tuple[JointStateSpace, np.ndarray, np.ndarray]:
    space = JointStateSpace([m.k for m in models])
    table = space.state_table()
    sums = np.zeros(space.n_states)
    for i, m in enumerate(models):
        sums += m.levels[table[:, i]]
    return space, table, sums


def co_disaggregate(aggregate: PowerSeries, models,
                    joint_cap: int = CO_JOINT_CAP) -> list[PowerSeries]:
    """Per-timestep combinatorial match of the aggregate to level sums.

    At each sample, independently, the joint state minimizing
    ``|aggregate - sum of levels|`` is chosen; ties go to the smallest flat
    joint index. Returns one series per model, in model order.
    """
    models = list(models)
    space, table, sums = _joint_level_sums(models)
    if space.n_states > joint_cap:
        raise DataError(f"joint state count {space.n_states} exceeds cap {joint_cap}")
    if aggregate.has_gaps:
        raise DataError("aggregate contains gaps")
    idx = _kernels.co_assign(aggregate.values, sums)
    return [
        PowerSeries(aggregate.start_time, aggregate.period,
                    m.levels[table[idx, i]], m.label)
        for i, m in enumerate(models)
    ]


def _assign_levels(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return np.abs(values[:, None] - levels[None, :]).argmin(axis=1)


def fit_fhmm(train: AlignedDataset, k: int = 2, seed: int = 0,
             labels=None) -> list[ApplianceStateModel]:
    """Estimate an independent hidden Markov chain per appliance channel.

    Levels come from learn_states; transitions are add-one-smoothed bigram
    frequencies of the assigned states; per-level emission std is the
    within-cluster deviation floored at the variance floor; the initial
    distribution is the empirical state frequency.
    """
    out = []
    labels = train.labels if labels is None else tuple(labels)
    for label in labels:
        ch = train.appliance(label)
        base = learn_states(ch, k, seed)
        states = _assign_levels(ch.values, base.levels)
        kk = base.k
        counts = np.zeros((kk, kk))
        np.add.at(counts, (states[:-1], states[1:]), 1)
        transition = (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + kk)
        std = np.empty(kk)
        for s in range(kk):
            members = ch.values[states == s]
            std[s] = members.std() if members.size else 0.0
        std = np.maximum(std, EMISSION_STD_FLOOR_W)
        initial = np.bincount(states, minlength=kk) / states.size
        out.append(ApplianceStateModel(label, base.levels, transition, std, initial))
    return out


def build_joint_chain(aggregate: PowerSeries, models):
    """Log-space joint chain for the factorial model: (space, state table,
    initial, transition, per-timestep emission).

    Joint transition probabilities multiply across appliances; the joint
    emission is Gaussian with mean = sum of levels and variance = sum of
    per-appliance emission variances.
    """
    models = list(models)
    for m in models:
        if m.transition is None or m.emission_std is None or m.initial is None:
            raise DataError(f"model {m.label!r} lacks HMM parameters")
    if aggregate.has_gaps:
        raise DataError("aggregate contains gaps")
    space, table, mu = _joint_level_sums(models)
    var = np.zeros(space.n_states)
    log_trans = np.zeros((space.n_states, space.n_states))
    log_init = np.zeros(space.n_states)
    with np.errstate(divide="ignore"):
        for i, m in enumerate(models):
            si = table[:, i]
            var += m.emission_std[si] ** 2
            log_trans += np.log(m.transition)[si[:, None], si[None, :]]
            log_init += np.log(m.initial)[si]
    x = aggregate.values
    log_emit = -0.5 * np.log(2.0 * np.pi * var)[None, :] \
        - (x[:, None] - mu[None, :]) ** 2 / (2.0 * var)[None, :]
    if np.isnan(log_emit).any():
        raise DataError("non-finite emission log-probabilities")
    return space, table, log_init, log_trans, log_emit


def fhmm_disaggregate(aggregate: PowerSeries, models,
                      joint_cap: int = FHMM_JOINT_CAP) -> list[PowerSeries]:
    """Exact Viterbi decode of the joint chain over all appliance models.

    Ties on the backtrace resolve to the smallest flat joint index.
    """
    models = list(models)
    space, table, log_init, log_trans, log_emit = build_joint_chain(aggregate, models)
    if space.n_states > joint_cap:
        raise DataError(f"joint state count {space.n_states} exceeds cap {joint_cap}")
    path, best = _kernels.viterbi_path(log_init, log_trans, log_emit)
    if not np.isfinite(best):
        raise DataError("Viterbi produced a non-finite path log-probability")
    return [
        PowerSeries(aggregate.start_time, aggregate.period,
                    m.levels[table[path, i]], m.label)
        for i, m in enumerate(models)
    ]


def joint_log_likelihood(aggregate: PowerSeries, models, path: np.ndarray) -> float:
    """Log-probability of one joint state path under the factorial model."""
    models = list(models)
    space, table, mu = _joint_level_sums(models)
    var = np.zeros(space.n_states)
    for i, m in enumerate(models):
        var += m.emission_std[table[:, i]] ** 2
    x = aggregate.values
    with np.errstate(divide="ignore"):
        total = 0.0
        for i, m in enumerate(models):
            si = table[path, i]
            total += math.log(m.initial[si[0]]) if m.initial[si[0]] > 0 else -math.inf
            total += np.log(m.transition)[si[:-1], si[1:]].sum()
    v = var[path]
    total += float(np.sum(-0.5 * np.log(2.0 * np.pi * v) - (x - mu[path]) ** 2 / (2.0 * v)))
    return float(total)


def save_state_models(models, stream) -> None:
    """Write fitted state models as a self-describing text record."""
    w = stream.write
    for m in models:
        w(f"appliance {m.label}\n")
        w("levels " + " ".join(repr(float(v)) for v in m.levels) + "\n")
        if m.initial is not None:
            w("initial " + " ".join(repr(float(v)) for v in m.initial) + "\n")
        if m.emission_std is not None:
            w("emission_std " + " ".join(repr(float(v)) for v in m.emission_std) + "\n")
        if m.transition is not None:
            rows = [" ".join(repr(float(v)) for v in row) for row in m.transition]
            w("transition " + " ; ".join(rows) + "\n")
        w("\n")


def load_state_models(stream) -> list[ApplianceStateModel]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    models = []
    fields: dict = {}

    def flush():
        if fields:
            models.append(ApplianceStateModel(
                fields["label"], np.asarray(fields["levels"]),
                fields.get("transition"), fields.get("emission_std"),
                fields.get("initial")))
            fields.clear()

    for line in stream:
        line = line.strip()
        if not line:
            flush()
            continue
        key, _, rest = line.partition(" ")
        if key == "appliance":
            flush()
            fields["label"] = rest
        elif key == "transition":
            fields["transition"] = np.asarray(
                [[float(v) for v in row.split()] for row in rest.split(";")])
        elif key in ("levels", "initial", "emission_std"):
            fields[key] = np.asarray([float(v) for v in rest.split()])
        else:
            raise DataError(f"unknown state-model field {key!r}")
    flush()
    return models
