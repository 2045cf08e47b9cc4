"""The uniform fit/predict contract and the registry of all 11 model
families.

Every disaggregator is built from (family name, hyperparameters, target
appliance labels, seed), fits on a train/validation pair of aligned
datasets, and predicts one non-negative series per target on the input
grid. Hyperparameter names are validated against the family so config
typos fail loudly.
"""

from __future__ import annotations

import abc
from pathlib import Path

from . import classic, neural, trees
from .errors import ConfigError
from .timeseries import AlignedDataset, PowerSeries

NEURAL_DEFAULTS = {
    "optimizer": "adam",
    "learning_rate": 1e-3,
    "loss": "mse",
    "dropout": 0.2,
    "num_layers": 5,
    "hidden": 64,
    "epochs": 20,
    "batch_size": 64,
    "stacked": 1,
    "window_size": 50,
    "sequence_length": 20,
}

FAMILY_DEFAULTS = {
    "co": {"k": 2},
    "fhmm": {"k": 2},
    "dt": {"criterion": "squared_error", "min_samples_split": 10,
           "lag": 10, "max_depth": 20},
    "rf": {"criterion": "squared_error", "min_samples_split": 10,
           "n_estimators": 10, "lag": 10, "max_depth": 20},
}
for fam in neural.NEURAL_FAMILIES:
    FAMILY_DEFAULTS[fam] = dict(NEURAL_DEFAULTS)

_INT_PARAMS = {"k", "min_samples_split", "n_estimators", "lag", "max_depth",
               "num_layers", "hidden", "epochs", "batch_size", "stacked",
               "window_size", "sequence_length"}


def resolve_params(family: str, params: dict) -> dict:
    """Apply family defaults and reject unknown hyperparameter names."""
    if family not in FAMILY_DEFAULTS:
        raise ConfigError(f"unknown model family {family!r}")
    merged = dict(FAMILY_DEFAULTS[family])
    for key, value in params.items():
        if key not in merged:
            raise ConfigError(f"family {family!r} has no hyperparameter {key!r}")
        merged[key] = int(value) if key in _INT_PARAMS else value
    return merged


class Disaggregator(abc.ABC):
    """Uniform interface every model family satisfies."""

    family: str = ""

    def __init__(self, targets, params: dict | None = None, seed: int = 0):
        self.targets = tuple(targets)
        if not self.targets:
            raise ConfigError("at least one target appliance required")
        self.params = resolve_params(self.family, params or {})
        self.seed = seed
        self.fitted = False

    @abc.abstractmethod
    def fit(self, train: AlignedDataset, val: AlignedDataset) -> "Disaggregator":
        ...

    @abc.abstractmethod
    def predict(self, aggregate: PowerSeries) -> list[PowerSeries]:
        ...

    def save(self, directory) -> None:
        """Write the fitted state into the experiment output directory."""


class StateMatchDisaggregator(Disaggregator):
    """Per-timestep combinatorial matching of level sums to the aggregate."""

    family = "co"

    def fit(self, train, val):
        self.models = [classic.learn_states(train.appliance(t), self.params["k"], self.seed)
                       for t in self.targets]
        self.fitted = True
        return self

    def predict(self, aggregate):
        return classic.co_disaggregate(aggregate, self.models)

    def save(self, directory):
        with open(Path(directory) / f"{self.family}_states.txt", "w") as fh:
            classic.save_state_models(self.models, fh)


class FactorialHMMDisaggregator(StateMatchDisaggregator):
    """Exact joint Viterbi over independent per-appliance chains."""

    family = "fhmm"

    def fit(self, train, val):
        self.models = classic.fit_fhmm(train, self.params["k"], self.seed,
                                       labels=self.targets)
        self.fitted = True
        return self

    def predict(self, aggregate):
        return classic.fhmm_disaggregate(aggregate, self.models)


class TreeDisaggregator(Disaggregator):
    """One regression tree per target over lagged aggregate features."""

    family = "dt"

    def _fit_one(self, X, y):
        p = self.params
        return trees.fit_cart(X, y, p["criterion"], p["min_samples_split"],
                              p["max_depth"], seed=self.seed)

    def fit(self, train, val):
        X = trees.build_lag_features(train.aggregate, self.params["lag"])
        self.models = {t: self._fit_one(X, train.appliance(t).values)
                       for t in self.targets}
        self.fitted = True
        return self

    def predict(self, aggregate):
        X = trees.build_lag_features(aggregate, self.params["lag"])
        return [PowerSeries(aggregate.start_time, aggregate.period,
                            trees.predict_tree(self.models[t], X), t)
                for t in self.targets]

    def save(self, directory):
        for t, model in self.models.items():
            with open(Path(directory) / f"{self.family}_{t}.json", "w") as fh:
                trees.save_tree_model(model, fh)


class ForestDisaggregator(TreeDisaggregator):
    family = "rf"

    def _fit_one(self, X, y):
        p = self.params
        return trees.fit_forest(X, y, p["n_estimators"], p["criterion"],
                                p["min_samples_split"], p["max_depth"],
                                seed=self.seed)


class NeuralDisaggregator(Disaggregator):
    """One trained network per target appliance."""

    family = ""  # concrete subclasses below

    def _spec(self) -> neural.NetworkSpec:
        p = self.params
        window = p["sequence_length"] if self.family in ("rnn_gru", "lstm") \
            else p["window_size"]
        return neural.NetworkSpec(
            family=self.family, window=window, num_layers=p["num_layers"],
            hidden=p["hidden"], dropout=p["dropout"], optimizer=p["optimizer"],
            learning_rate=p["learning_rate"], loss=p["loss"], epochs=p["epochs"],
            batch_size=p["batch_size"], seed=self.seed, stacked=p["stacked"])

    def fit(self, train, val):
        self.nets = {}
        self.histories = {}
        for t in self.targets:
            fitted, history = neural.fit_family(self._spec(), train, val, t)
            self.nets[t] = fitted
            self.histories[t] = history
        self.fitted = True
        return self

    def predict(self, aggregate):
        return [neural.predict_series(self.nets[t], aggregate) for t in self.targets]

    def save(self, directory):
        for t, fitted in self.nets.items():
            with open(Path(directory) / f"{self.family}_{t}.params", "w") as fh:
                neural.save_network(fitted, fh)


def _neural_class(name: str):
    return type(f"Neural_{name}", (NeuralDisaggregator,), {"family": name})


MODEL_REGISTRY = {
    "co": StateMatchDisaggregator,
    "fhmm": FactorialHMMDisaggregator,
    "dt": TreeDisaggregator,
    "rf": ForestDisaggregator,
    **{name: _neural_class(name) for name in neural.NEURAL_FAMILIES},
}

ALL_FAMILIES = tuple(MODEL_REGISTRY)


def build_model(family: str, targets, params: dict | None = None,
                seed: int = 0) -> Disaggregator:
    if family not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model family {family!r}")
    return MODEL_REGISTRY[family](targets, params, seed)
