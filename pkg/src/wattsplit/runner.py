"""Experiment orchestration: data preparation, single-model runs, automated
model search, and the append-only trial log.

The test split sits behind an access guard: the optimization objective
closes over the train and validation splits only, and every test access is
recorded, so leakage into fitting or model selection is auditable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import report as report_mod
from .config import ExperimentConfig
from .errors import ConfigError, DataError
from .families import build_model
from .hpo import (SearchSpace, Trial, TrialHistory, TpeConfig,
                  default_search_space, run_optimization)
from .metrics import MetricReport, evaluate_predictions
from .synth import generate_synthetic, parse_house_spec
from .timeseries import AlignedDataset, align, load_csv, resample, split_by_date

_NEURAL_EXTRA = ("epochs", "batch_size")


@dataclass
class SplitAudit:
    """Counts test-split accesses relative to the final-evaluation marker."""

    events: list = field(default_factory=list)
    final_started: bool = False

    def begin_final(self) -> None:
        self.final_started = True

    def record(self, phase: str) -> None:
        self.events.append((phase, self.final_started))

    @property
    def accesses_before_final(self) -> int:
        return sum(1 for _, after in self.events if not after)


class GuardedSplit:
    """Holder for the test split; every read is logged on the audit."""

    def __init__(self, ds: AlignedDataset, audit: SplitAudit):
        self._ds = ds
        self.audit = audit

    def get(self, phase: str) -> AlignedDataset:
        self.audit.record(phase)
        return self._ds


def prepare_data(cfg: ExperimentConfig):
    """Load or synthesize the house, resample, align, and split.

    Returns (train, val, guarded test, audit).
    """
    if cfg.synth is not None:
        with open(cfg.synth, "r", encoding="utf-8") as fh:
            house = parse_house_spec(fh.read())
        ds = generate_synthetic(house)
        channels = [ds.aggregate, *ds.appliances]
    else:
        with open(cfg.dataset, "rb") as fh:
            channels = load_csv(fh)
    channels = [resample(ch, cfg.sample_period_s) for ch in channels]
    ds = align(channels[0], channels[1:], gap_policy=cfg.gap_policy)
    for label in cfg.appliances:
        ds.appliance(label)  # raises KeyError on unknown labels
    train, val, test = split_by_date(ds, cfg.split)
    audit = SplitAudit()
    return train, val, GuardedSplit(test, audit), audit


def _model_params(cfg: ExperimentConfig, family: str, overrides: dict) -> dict:
    params = dict(overrides)
    if family in ("co", "fhmm", "dt", "rf"):
        return params
    for key in _NEURAL_EXTRA:
        params.setdefault(key, getattr(cfg, key))
    return params


@dataclass
class RunResult:
    report: MetricReport
    model: object
    audit: SplitAudit
    out_dir: Path
    best: Trial | None = None
    history: TrialHistory | None = None


def run_single(cfg: ExperimentConfig) -> RunResult:
    """Fit one configured family on the train split and score it on test."""
    if cfg.mode != "single":
        raise ConfigError("run_single requires mode = single")
    train, val, guard, audit = prepare_data(cfg)
    model = build_model(cfg.family, cfg.appliances,
                        _model_params(cfg, cfg.family, cfg.params), cfg.seed)
    model.fit(train, val)
    audit.begin_final()
    test = guard.get("final-eval")
    rep = evaluate_predictions(test, model.predict(test.aggregate), cfg.threshold_watts)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(rep.to_record(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return RunResult(rep, model, audit, out)


def trial_record(trial: Trial, family: str, params: dict, wall_time_s: float,
                 kind: str = "trial", test_mae: float | None = None) -> dict:
    val_mae = None if trial.status != "ok" else trial.loss
    return {
        "kind": kind,
        "id": trial.id,
        "family": family,
        "params": params,
        "val_mae": val_mae,
        "test_mae": test_mae,
        "accuracy": trial.metrics.get("accuracy"),
        "metrics": trial.metrics,
        "wall_time_s": wall_time_s,
        "status": trial.status,
        "seed": trial.seed,
    }


def log_trial(record: dict, stream) -> None:
    """Append one JSON line; keys are sorted so identical runs log
    identical bytes."""
    stream.write(json.dumps(record, sort_keys=True) + "\n")
    stream.flush()


def replay_log(path) -> tuple[TrialHistory, dict | None]:
    """Rebuild the trial history (and the final record, if present) from a
    log file."""
    history = TrialHistory()
    final = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"trial log line {lineno}: corrupt record") from None
            if rec.get("kind") == "final":
                final = rec
                continue
            config = {"family": rec["family"], **rec["params"]}
            loss = rec["val_mae"] if rec["status"] == "ok" else float("inf")
            history.append(Trial(rec["id"], config, loss, rec["metrics"],
                                 rec["status"], rec["seed"]))
    return history, final


def _split_trial_config(config: dict) -> tuple[str, dict]:
    params = dict(config)
    family = params.pop("family")
    return family, params


def run_automl(cfg: ExperimentConfig, tpe: TpeConfig | None = None,
               sampler: str = "tpe", space: SearchSpace | None = None) -> RunResult:
    """Search the family/hyperparameter space against validation MAE.

    Each trial fits on train and scores on validation; the test split is
    touched exactly once, after the budget, to score the refitted best
    configuration.
    """
    if cfg.mode != "automl":
        raise ConfigError("run_automl requires mode = automl")
    train, val, guard, audit = prepare_data(cfg)
    if space is None:
        space = default_search_space(cfg.space_families, cfg.learning_rates)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def objective(config: dict, trial_seed: int):
        family, params = _split_trial_config(config)
        model = build_model(family, cfg.appliances,
                            _model_params(cfg, family, params), trial_seed)
        model.fit(train, val)
        rep = evaluate_predictions(val, model.predict(val.aggregate), cfg.threshold_watts)
        return rep.mae_overall, rep.to_record()

    started = {}
    log_path = out / "trials.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:

        def on_trial(trial: Trial):
            family, params = _split_trial_config(trial.config)
            wall = time.monotonic() - started.get("t0", time.monotonic())
            log_trial(trial_record(trial, family, params, wall), log)
            started["t0"] = time.monotonic()

        started["t0"] = time.monotonic()
        history, best = run_optimization(space, objective, cfg.max_evals, cfg.seed,
                                         cfg=tpe, sampler=sampler, on_trial=on_trial)

        family, params = _split_trial_config(best.config)
        model = build_model(family, cfg.appliances,
                            _model_params(cfg, family, params), best.seed)
        model.fit(train, val)
        audit.begin_final()
        test = guard.get("final-eval")
        t0 = time.monotonic()
        rep = evaluate_predictions(test, model.predict(test.aggregate), cfg.threshold_watts)
        log_trial(trial_record(best, family, params, time.monotonic() - t0,
                               kind="final", test_mae=rep.mae_overall), log)

    model.save(out)
    report_mod.emit_report(history, out, final_test_mae=rep.mae_overall)
    return RunResult(rep, model, audit, out, best=best, history=history)
