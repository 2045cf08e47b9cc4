"""Experiment configuration: a flat key-value text format with dotted keys.

Unknown keys are rejected so hyperparameter typos fail before any training
starts. See the README for the full key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .families import FAMILY_DEFAULTS
from .hpo import ALL_FAMILIES, DEFAULT_LEARNING_RATES
from .timeseries import SplitSpec

_TOP_KEYS = {
    "mode", "dataset", "synth", "appliance", "appliances", "sample_period_s",
    "family", "max_evals", "epochs", "batch_size", "threshold_watts", "seed",
    "out", "gap_policy",
}
_SPLIT_KEYS = {"split.train_start", "split.train_end", "split.val_end", "split.test_end"}
_SPACE_KEYS = {"space.families", "space.learning_rates"}


@dataclass
class ExperimentConfig:
    mode: str
    out: str
    appliances: tuple
    split: SplitSpec
    dataset: str | None = None
    synth: str | None = None
    sample_period_s: float = 60.0
    family: str | None = None
    params: dict = field(default_factory=dict)
    max_evals: int = 30
    epochs: int = 20
    batch_size: int = 64
    threshold_watts: float = 10.0
    seed: int = 0
    gap_policy: str = "forward_fill"
    space_families: tuple = ALL_FAMILIES
    learning_rates: tuple = DEFAULT_LEARNING_RATES


def _parse_scalar(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def _csv_list(value: str) -> tuple:
    items = tuple(v.strip() for v in value.split(",") if v.strip())
    if not items:
        raise ConfigError("empty list value")
    return items


def parse_config(text: str) -> ExperimentConfig:
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not (key in _TOP_KEYS or key in _SPLIT_KEYS or key in _SPACE_KEYS
                or key.startswith("param.")):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        entries[key] = value

    def take(key, default=None, required=False):
        if key in entries:
            return entries.pop(key)
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default

    mode = take("mode", required=True)
    if mode not in ("single", "automl"):
        raise ConfigError(f"mode must be single or automl, got {mode!r}")
    dataset = take("dataset")
    synth = take("synth")
    if (dataset is None) == (synth is None):
        raise ConfigError("exactly one of 'dataset' or 'synth' is required")
    if "appliance" in entries and "appliances" in entries:
        raise ConfigError("give either 'appliance' or 'appliances', not both")
    appliances = _csv_list(take("appliances") or take("appliance", required=True))

    split = SplitSpec.from_dates(
        take("split.train_start", required=True), take("split.train_end", required=True),
        take("split.val_end", required=True), take("split.test_end", required=True))

    cfg = ExperimentConfig(
        mode=mode, out=take("out", required=True), appliances=appliances,
        split=split, dataset=dataset, synth=synth,
        sample_period_s=float(take("sample_period_s", 60)),
        max_evals=int(take("max_evals", 30)),
        epochs=int(take("epochs", 20)),
        batch_size=int(take("batch_size", 64)),
        threshold_watts=float(take("threshold_watts", 10)),
        seed=int(take("seed", 0)),
        gap_policy=take("gap_policy", "forward_fill"),
    )
    if cfg.max_evals < 1 or cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError("max_evals, epochs, and batch_size must be >= 1")
    if cfg.sample_period_s <= 0:
        raise ConfigError("sample_period_s must be > 0")

    family = take("family")
    if mode == "single":
        if family is None:
            raise ConfigError("single mode requires 'family'")
        if family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown model family {family!r}")
        cfg.family = family
    elif family is not None:
        raise ConfigError("'family' is only valid in single mode")

    if "space.families" in entries:
        fams = _csv_list(entries.pop("space.families"))
        for f in fams:
            if f not in ALL_FAMILIES:
                raise ConfigError(f"unknown family {f!r} in space.families")
        cfg.space_families = fams
    if "space.learning_rates" in entries:
        cfg.learning_rates = tuple(float(v) for v in _csv_list(entries.pop("space.learning_rates")))

    params = {}
    for key in list(entries):
        if key.startswith("param."):
            name = key[len("param."):]
            if mode != "single":
                raise ConfigError("param.* overrides are only valid in single mode")
            if name not in FAMILY_DEFAULTS[cfg.family]:
                raise ConfigError(f"family {cfg.family!r} has no hyperparameter {name!r}")
            params[name] = _parse_scalar(entries.pop(key))
    cfg.params = params

    if entries:
        raise ConfigError(f"unused key {sorted(entries)[0]!r}")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
