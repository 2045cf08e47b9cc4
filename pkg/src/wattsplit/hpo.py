"""Tree-structured search spaces and a sequential model-based optimizer.

The optimizer splits the trial history into good and bad sets by loss
quantile, fits a Parzen density to each parameter under both sets, and
suggests the candidate maximizing the good/bad density ratio (the expected
improvement surrogate). Conditional subtrees condition their densities only
on the trials that took their branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDiverged


# ---------------------------------------------------------------------------
# parameter specifications


@dataclass(frozen=True)
class Uniform:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"{self.name}: lo must be < hi")


@dataclass(frozen=True)
class QUniform:
    """Uniform draw rounded to the nearest multiple of q, clamped to [lo, hi]."""

    name: str
    lo: float
    hi: float
    q: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"{self.name}: lo must be < hi")
        if self.q <= 0:
            raise ConfigError(f"{self.name}: q must be > 0")

    @property
    def integral(self) -> bool:
        return all(float(v).is_integer() for v in (self.lo, self.hi, self.q))

    def lattice(self) -> np.ndarray:
        lo_k = math.ceil(self.lo / self.q - 1e-9)
        hi_k = math.floor(self.hi / self.q + 1e-9)
        points = self.q * np.arange(lo_k, hi_k + 1)
        extra = [v for v in (self.lo, self.hi) if not np.any(np.isclose(points, v))]
        return np.sort(np.concatenate([points, extra])) if extra else points

    def quantize(self, x: float):
        v = min(max(self.q * np.rint(x / self.q), self.lo), self.hi)
        return int(round(v)) if self.integral else float(v)


@dataclass(frozen=True)
class Choice:
    """Categorical parameter; each option may open a nested subspace."""

    name: str
    options: tuple
    subspaces: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise ConfigError(f"{self.name}: Choice needs at least one option")
        subs = tuple(tuple(s) for s in self.subspaces) if self.subspaces \
            else tuple(() for _ in self.options)
        if len(subs) != len(self.options):
            raise ConfigError(f"{self.name}: one subspace per option required")
        object.__setattr__(self, "subspaces", subs)


ParamSpec = (Uniform, QUniform, Choice)


@dataclass(frozen=True)
class SearchSpace:
    """An ordered tuple of root parameters, each possibly conditional."""

    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        self._check_names(self.params, set())

    def _check_names(self, specs, seen: set):
        for spec in specs:
            if spec.name in seen:
                raise ConfigError(f"duplicate parameter name {spec.name!r} along a path")
            if isinstance(spec, Choice):
                for sub in spec.subspaces:
                    self._check_names(sub, seen | {spec.name})
            seen = seen | {spec.name}


def sample_random(space: SearchSpace, rng) -> dict:
    """One uniform configuration; only chosen branches are instantiated."""
    config: dict = {}
    _sample_into(space.params, rng, config)
    return config


def _sample_into(specs, rng, config: dict) -> None:
    for spec in specs:
        if isinstance(spec, Uniform):
            config[spec.name] = float(rng.uniform(spec.lo, spec.hi))
        elif isinstance(spec, QUniform):
            config[spec.name] = spec.quantize(rng.uniform(spec.lo, spec.hi))
        elif isinstance(spec, Choice):
            i = int(rng.integers(len(spec.options)))
            config[spec.name] = spec.options[i]
            _sample_into(spec.subspaces[i], rng, config)
        else:
            raise ConfigError(f"unknown parameter spec {spec!r}")


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class Trial:
    """One evaluated configuration."""

    id: int
    config: dict
    loss: float
    metrics: dict = field(default_factory=dict)
    status: str = "ok"
    seed: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok" and math.isfinite(self.loss)


class TrialHistory:
    """Append-only record of completed trials."""

    def __init__(self, trials=()):
        self.trials = list(trials)

    def append(self, trial: Trial) -> None:
        self.trials.append(trial)

    def ok_trials(self) -> list:
        return [t for t in self.trials if t.ok]

    def __iter__(self):
        return iter(self.trials)

    def __len__(self):
        return len(self.trials)


def split_good_bad(trials, gamma: float) -> tuple[list, list]:
    """Quantile split by loss; ties go to the lower trial id, into good first."""
    trials = [t for t in trials if t.ok]
    if not trials:
        raise DataError("split_good_bad: no completed trials")
    ordered = sorted(trials, key=lambda t: (t.loss, t.id))
    n_good = max(1, math.ceil(gamma * len(ordered)))
    return ordered[:n_good], ordered[n_good:]


def best_trial(history) -> Trial:
    ok = [t for t in history if t.ok]
    if not ok:
        raise DataError("no completed trials")
    return min(ok, key=lambda t: (t.loss, t.id))


# ---------------------------------------------------------------------------
# Parzen estimators


@dataclass(frozen=True)
class TpeConfig:
    # prior_weight 5 keeps rarely-tried categorical options competitive in
    # the density ratio; at 1 the optimizer can lock onto an early
    # categorical choice and never leave it within a 30-trial budget
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    prior_weight: float = 5.0
    bw_clip: tuple = (0.01, 1.0)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must be in (0, 1)")
        if self.n_startup < 1 or self.n_candidates < 1 or self.prior_weight <= 0:
            raise ConfigError("n_startup, n_candidates >= 1 and prior_weight > 0 required")


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


class _ContinuousParzen:
    """Equal-weight truncated-Gaussian mixture plus a uniform prior component.

    The bandwidth of observation i is its larger gap to the sorted
    neighbors, clipped to the configured fractions of the domain width.
    """

    def __init__(self, spec, observations, cfg: TpeConfig):
        self.lo, self.hi = float(spec.lo), float(spec.hi)
        width = self.hi - self.lo
        obs = np.sort(np.asarray(observations, dtype=np.float64))
        n = obs.size
        if n == 0:
            bws = np.empty(0)
        elif n == 1:
            bws = np.array([width])
        else:
            gaps = np.diff(obs)
            left = np.concatenate([[-np.inf], gaps])
            right = np.concatenate([gaps, [-np.inf]])
            bws = np.maximum(left, right)
        bws = np.clip(bws, cfg.bw_clip[0] * width, cfg.bw_clip[1] * width)
        self.mus = obs
        self.sigmas = bws
        self.prior_w = cfg.prior_weight / (n + cfg.prior_weight)
        self.comp_w = 1.0 / (n + cfg.prior_weight)
        if n:
            z_lo = (self.lo - obs) / bws
            z_hi = (self.hi - obs) / bws
            self.norms = np.array([_norm_cdf(b) - _norm_cdf(a) for a, b in zip(z_lo, z_hi)])
        else:
            self.norms = np.empty(0)

    def pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if np.any((x < self.lo) | (x > self.hi)):
            raise DataError("parzen pdf evaluated outside the domain")
        width = self.hi - self.lo
        dens = np.full(x.shape, self.prior_w / width)
        if self.mus.size:
            z = (x[:, None] - self.mus[None, :]) / self.sigmas[None, :]
            kernel = np.exp(-0.5 * z * z) / (self.sigmas[None, :] * math.sqrt(2.0 * math.pi))
            dens = dens + self.comp_w * (kernel / self.norms[None, :]).sum(axis=1)
        return dens

    def sample(self, rng, size: int) -> np.ndarray:
        out = np.empty(size)
        n = self.mus.size
        weights = np.concatenate([[self.prior_w], np.full(n, self.comp_w)])
        for j in range(size):
            comp = rng.choice(n + 1, p=weights)
            if comp == 0:
                out[j] = rng.uniform(self.lo, self.hi)
                continue
            mu, sigma = self.mus[comp - 1], self.sigmas[comp - 1]
            for _ in range(1000):
                draw = rng.normal(mu, sigma)
                if self.lo <= draw <= self.hi:
                    break
            else:
                draw = rng.uniform(self.lo, self.hi)
            out[j] = draw
        return out


class _LatticeParzen:
    """Continuous mixture renormalized over the quantization lattice."""

    def __init__(self, spec: QUniform, observations, cfg: TpeConfig):
        self.spec = spec
        self.points = spec.lattice()
        cont = _ContinuousParzen(spec, observations, cfg)
        raw = cont.pdf(self.points)
        self.pmf = raw / raw.sum()

    def _index(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        idx = np.searchsorted(self.points, x - 1e-9)
        idx = np.clip(idx, 0, self.points.size - 1)
        if not np.allclose(self.points[idx], x):
            raise DataError("value off the quantization lattice")
        return idx

    def pdf(self, x):
        return self.pmf[self._index(x)]

    def sample(self, rng, size: int):
        draws = rng.choice(self.points.size, size=size, p=self.pmf)
        values = self.points[draws]
        if self.spec.integral:
            return [int(round(v)) for v in values]
        return [float(v) for v in values]


class _CategoricalParzen:
    """Option probabilities proportional to (count + prior weight)."""

    def __init__(self, spec: Choice, observations, cfg: TpeConfig):
        self.options = spec.options
        counts = np.array([sum(1 for o in observations if o == opt)
                           for opt in spec.options], dtype=np.float64)
        weights = counts + cfg.prior_weight
        self.pmf = weights / weights.sum()

    def _index(self, values) -> np.ndarray:
        try:
            return np.array([self.options.index(v) for v in values])
        except ValueError:
            raise DataError("value is not one of the Choice options") from None

    def pdf(self, x):
        if isinstance(x, (list, tuple, np.ndarray)):
            return self.pmf[self._index(x)]
        return self.pmf[self._index([x])]

    def sample(self, rng, size: int) -> list:
        idx = rng.choice(len(self.options), size=size, p=self.pmf)
        return [self.options[i] for i in idx]


def parzen(spec, observations, cfg: TpeConfig = TpeConfig()):
    """Density estimator plus sampler for one parameter's observations."""
    if isinstance(spec, Choice):
        return _CategoricalParzen(spec, observations, cfg)
    if isinstance(spec, QUniform):
        return _LatticeParzen(spec, observations, cfg)
    if isinstance(spec, Uniform):
        return _ContinuousParzen(spec, observations, cfg)
    raise ConfigError(f"unknown parameter spec {spec!r}")


def parzen_pdf(observations, spec, x, cfg: TpeConfig = TpeConfig()):
    """Density of ``x`` under the Parzen estimate of the observations."""
    out = parzen(spec, observations, cfg).pdf(np.atleast_1d(x) if not isinstance(spec, Choice) else [x])
    return float(out[0]) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# suggestion and optimization loop


def tpe_suggest(space: SearchSpace, history, cfg: TpeConfig, rng) -> dict:
    """Next configuration to evaluate.

    Random until ``n_startup`` trials completed; afterwards each parameter
    along the active path picks the candidate maximizing the ratio of the
    good-trial density to the bad-trial density. A branch never taken falls
    back to its prior.
    """
    ok = [t for t in history if t.ok]
    if len(ok) < cfg.n_startup:
        return sample_random(space, rng)
    good, bad = split_good_bad(ok, cfg.gamma)
    config: dict = {}
    _tpe_into(space.params, good, bad, cfg, rng, config)
    return config


def _tpe_into(specs, good, bad, cfg: TpeConfig, rng, config: dict) -> None:
    for spec in specs:
        g_obs = [t.config[spec.name] for t in good if spec.name in t.config]
        b_obs = [t.config[spec.name] for t in bad if spec.name in t.config]
        l_est = parzen(spec, g_obs, cfg)
        g_est = parzen(spec, b_obs, cfg)
        cands = l_est.sample(rng, cfg.n_candidates)
        scores = np.asarray(l_est.pdf(cands)) / np.asarray(g_est.pdf(cands))
        value = cands[int(np.argmax(scores))]
        config[spec.name] = value
        if isinstance(spec, Choice):
            i = spec.options.index(value)
            _tpe_into(spec.subspaces[i],
                      [t for t in good if t.config.get(spec.name) == value],
                      [t for t in bad if t.config.get(spec.name) == value],
                      cfg, rng, config)


def run_optimization(space: SearchSpace, objective, max_evals: int, seed: int,
                     cfg: TpeConfig | None = None, sampler: str = "tpe",
                     on_trial=None) -> tuple[TrialHistory, Trial]:
    """Run exactly ``max_evals`` sequential trials and return the best.

    ``objective(config, trial_seed)`` returns (loss, aux metrics) or raises
    DataError / TrainingDiverged, which records a failed trial with
    infinite loss; failed trials never enter the density fits. The trial
    seed is ``seed XOR trial id``.
    """
    if max_evals < 1:
        raise ConfigError("max_evals must be >= 1")
    if sampler not in ("tpe", "random"):
        raise ConfigError(f"unknown sampler {sampler!r}")
    cfg = cfg or TpeConfig()
    rng = np.random.default_rng(seed)
    history = TrialHistory()
    for tid in range(max_evals):
        if sampler == "random":
            config = sample_random(space, rng)
        else:
            config = tpe_suggest(space, history, cfg, rng)
        trial_seed = seed ^ tid
        try:
            loss, metrics = objective(config, trial_seed)
            loss = float(loss)
            if not math.isfinite(loss):
                raise TrainingDiverged("objective returned a non-finite loss")
            trial = Trial(tid, config, loss, metrics, "ok", trial_seed)
        except (DataError, TrainingDiverged) as exc:
            trial = Trial(tid, config, math.inf, {"error": str(exc)}, "failed", trial_seed)
        history.append(trial)
        if on_trial is not None:
            on_trial(trial)
    if not history.ok_trials():
        raise DataError("all trials failed")
    return history, best_trial(history)


# ---------------------------------------------------------------------------
# the model search space


ALL_FAMILIES = ("co", "fhmm", "dt", "rf", "fcnn", "dae", "rnn_gru",
                "window_gru", "lstm", "seq2point", "seq2seq")

DEFAULT_LEARNING_RATES = (1e-2, 1e-3, 1e-4)
SEQUENCE_LENGTHS = (10, 20, 50)
WINDOW_SIZES = (20, 50, 100)


def family_subspace(family: str, learning_rates=DEFAULT_LEARNING_RATES) -> tuple:
    """The hyperparameters one model family consumes."""
    if family in ("co", "fhmm"):
        return (Choice("k", (2, 3)),)
    if family == "dt":
        return (Choice("criterion", ("squared_error", "friedman_mse")),
                QUniform("min_samples_split", 10, 20, 1))
    if family == "rf":
        return (Choice("criterion", ("squared_error", "friedman_mse")),
                QUniform("min_samples_split", 10, 20, 1),
                QUniform("n_estimators", 10, 30, 1))
    common = (Choice("optimizer", ("adam", "nadam")),
              Choice("learning_rate", tuple(learning_rates)),
              Choice("loss", ("mse", "mae")))
    if family in ("fcnn", "dae"):
        return common + (QUniform("num_layers", 5, 7, 1), Uniform("dropout", 0.1, 0.3))
    if family in ("rnn_gru", "lstm"):
        return common + (Choice("sequence_length", SEQUENCE_LENGTHS), Uniform("dropout", 0.1, 0.3))
    if family in ("window_gru", "seq2point", "seq2seq"):
        return common + (Choice("window_size", WINDOW_SIZES), Uniform("dropout", 0.1, 0.3))
    raise ConfigError(f"unknown family {family!r}")


def default_search_space(families=ALL_FAMILIES,
                         learning_rates=DEFAULT_LEARNING_RATES) -> SearchSpace:
    """Root choice over model families, each opening its own subtree."""
    families = tuple(families)
    for f in families:
        if f not in ALL_FAMILIES:
            raise ConfigError(f"unknown family {f!r}")
    subspaces = tuple(family_subspace(f, learning_rates) for f in families)
    return SearchSpace((Choice("family", families, subspaces),))
