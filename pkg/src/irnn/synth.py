"""Synthetic irregular multivariate series with known risk functions.

Each feature follows an Ornstein-Uhlenbeck process ``dx = -theta x dt + s dW``
(exact transitions), standardized by its stationary sd ``s / sqrt(2 theta)``,
sampled at Poisson observation times (rounded to the minute) and mapped to raw
units by ``raw_loc + raw_scale * x`` (``raw_loc + raw_scale * exp(x)`` for
log-normal features).  Risk functions take the standardized latent.  One
feature can carry a per-sample linear drift whose slope enters the label.
Labels are Bernoulli draws from ``sigmoid(log_odds / temperature)`` where

    log_odds = intercept + sum_d f_d(z_d(horizon)) + trend_coef * slope / trend_sd
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import EventRecord, write_long_csv
from .errors import ConfigError
from .kvconfig import as_bool, as_float, as_int, as_list, read_kv

RISK_KINDS = ("linear", "u_shaped", "saturating", "null")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    n_features: int = 8
    n_samples: int = 20_000
    horizon: float = 6.0
    rates: tuple = (4.0, 2.0, 1.0, 2.0, 0.5, 1.0, 2.0, 4.0)
    mean_reversion: tuple = (0.3,) * 8
    walk_scale: tuple = (0.5,) * 7 + (1.0,)
    risk: tuple = ("linear", "u_shaped", "saturating", "null", "null", "null", "null", "null")
    risk_scale: tuple = (1.0, 0.8, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0)
    raw_loc: tuple = (80.0, 120.0, 37.0, 10.0, 100.0, 50.0, 5.0, 1.0)
    raw_scale: tuple = (12.0, 15.0, 0.6, 1.5, 20.0, 8.0, 1.0, 1.0)
    lognormal: tuple = (False, False, False, False, False, False, False, True)
    trend_feature: int = 3
    trend_coef: float = 1.0
    trend_sd: float = 0.25
    temperature: float = 1.0
    intercept: float = -1.0
    seed: int = 0
    no_signal_control: bool = False

    def __post_init__(self):
        D = self.n_features
        if D < 1:
            raise ConfigError("n_features", f"must be >= 1, got {D}")
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be >= 1")
        if not self.horizon > 0:
            raise ConfigError("horizon", "must be positive")
        for name in ("rates", "mean_reversion", "walk_scale", "risk", "risk_scale", "raw_loc", "raw_scale", "lognormal"):
            if len(getattr(self, name)) != D:
                raise ConfigError(name, f"needs {D} entries, got {len(getattr(self, name))}")
        if any(not r > 0 for r in self.rates):
            raise ConfigError("rates", "must all be positive")
        if any(not t > 0 for t in self.mean_reversion):
            raise ConfigError("mean_reversion", "must all be positive")
        if any(not s > 0 for s in self.walk_scale):
            raise ConfigError("walk_scale", "must all be positive")
        if any(s <= 0 for s in self.raw_scale):
            raise ConfigError("raw_scale", "must all be positive")
        bad = [r for r in self.risk if r not in RISK_KINDS]
        if bad:
            raise ConfigError("risk", f"unknown risk function(s) {bad}; choose from {RISK_KINDS}")
        if not self.temperature > 0:
            raise ConfigError("temperature", "must be positive")
        if self.trend_feature >= D:
            raise ConfigError("trend_feature", f"must be < n_features ({D}) or negative to disable")
        if self.has_trend and not self.trend_sd > 0:
            raise ConfigError("trend_sd", "must be positive")
        has_signal = any(r != "null" and s != 0 for r, s in zip(self.risk, self.risk_scale)) or self.has_trend
        if not has_signal and not self.no_signal_control:
            raise ConfigError("risk", "at least one non-null risk function or a trend is required (set no_signal_control to allow none)")

    @property
    def has_trend(self) -> bool:
        return self.trend_feature >= 0 and self.trend_coef != 0

    @property
    def feature_names(self) -> list[str]:
        return [f"x{d}" for d in range(self.n_features)]

    @property
    def signal_features(self) -> list[int]:
        out = [d for d in range(self.n_features) if self.risk[d] != "null" and self.risk_scale[d] != 0]
        if self.has_trend and self.trend_feature not in out:
            out.append(self.trend_feature)
        return sorted(out)

    @property
    def null_features(self) -> list[int]:
        return [d for d in range(self.n_features) if d not in self.signal_features]

    @property
    def monotone_features(self) -> list[int]:
        return [d for d in range(self.n_features) if self.risk[d] in ("linear", "saturating") and self.risk_scale[d] != 0]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def null_config(**overrides) -> GeneratorConfig:
    """The no-signal control: every risk null, no trend, zero intercept."""
    base = dict(
        risk=("null",) * 8,
        risk_scale=(0.0,) * 8,
        trend_feature=-1,
        trend_coef=0.0,
        intercept=0.0,
        no_signal_control=True,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


_LIST_KEYS = {
    "rates": as_float,
    "mean_reversion": as_float,
    "walk_scale": as_float,
    "risk_scale": as_float,
    "raw_loc": as_float,
    "raw_scale": as_float,
}
_SCALAR_KEYS = {
    "n_features": as_int,
    "n_samples": as_int,
    "horizon": as_float,
    "trend_feature": as_int,
    "trend_coef": as_float,
    "trend_sd": as_float,
    "temperature": as_float,
    "intercept": as_float,
    "seed": as_int,
    "no_signal_control": as_bool,
}


def load_generator_config(path, **overrides) -> GeneratorConfig:
    """Read a flat key-value file; lists are comma-separated.  Missing keys keep defaults."""
    raw = read_kv(path)
    kw = {}
    for key, text in raw.items():
        if key in _SCALAR_KEYS:
            kw[key] = _SCALAR_KEYS[key](key, text)
        elif key in _LIST_KEYS:
            kw[key] = tuple(as_list(key, text, _LIST_KEYS[key]))
        elif key == "risk":
            kw[key] = tuple(p.strip() for p in text.split(",") if p.strip())
        elif key == "lognormal":
            kw[key] = tuple(as_bool(key, p) for p in text.split(",") if p.strip())
        else:
            raise ConfigError(key, "unknown generator config key")
    kw.update(overrides)
    D = kw.get("n_features", GeneratorConfig.n_features)
    if D != GeneratorConfig.n_features and D >= 1:
        # per-feature defaults only exist for the default width; broadcast the first entry
        defaults = GeneratorConfig()
        for name in ("rates", "mean_reversion", "walk_scale", "risk", "risk_scale", "raw_loc", "raw_scale", "lognormal"):
            kw.setdefault(name, (getattr(defaults, name)[0],) * D)
        if kw.get("trend_feature", defaults.trend_feature) >= D:
            kw.setdefault("trend_feature", -1)
    return GeneratorConfig(**kw)


def risk_value(kind: str, scale: float, v):
    v = np.asarray(v, dtype=np.float64)
    if kind == "linear":
        return scale * v
    if kind == "u_shaped":
        return scale * (v * v - 1.0)
    if kind == "saturating":
        return scale * np.tanh(1.5 * v)
    if kind == "null":
        return np.zeros_like(v)
    raise ConfigError("risk", f"unknown risk function {kind!r}")


def true_risk(config: GeneratorConfig, d: int, grid):
    """Ground-truth log-odds contribution of feature ``d`` at standardized values ``grid``."""
    if not 0 <= d < config.n_features:
        raise IndexError(f"feature {d} out of range")
    return risk_value(config.risk[d], config.risk_scale[d], grid)


@dataclass
class SynthDataset:
    config: GeneratorConfig
    events: dict[str, list[EventRecord]]
    labels: dict[str, int]
    log_odds: dict[str, float]
    final_latent: dict[str, list[float]] = field(default_factory=dict)
    slopes: dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a)) if a >= 0 else np.exp(a) / (1.0 + np.exp(a))


def stationary_sd(config: GeneratorConfig, d: int) -> float:
    return config.walk_scale[d] / np.sqrt(2.0 * config.mean_reversion[d])


def _to_raw(config, d, z):
    x = stationary_sd(config, d) * z  # the latent itself
    if config.lognormal[d]:
        return config.raw_scale[d] * np.exp(x) + config.raw_loc[d]
    return config.raw_loc[d] + config.raw_scale[d] * x


def generate(config: GeneratorConfig) -> SynthDataset:
    """Draw a dataset; every random number comes from ``config.seed``."""
    D, H = config.n_features, config.horizon
    children = np.random.SeedSequence(config.seed).spawn(config.n_samples)
    width = len(str(config.n_samples - 1))
    events, labels, log_odds, finals, slopes = {}, {}, {}, {}, {}
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        sid = f"s{i:0{width}d}"
        slope = rng.normal(0.0, config.trend_sd) if config.has_trend else 0.0
        evs = []
        z_end = np.zeros(D)
        for d in range(D):
            theta = config.mean_reversion[d]
            sigma = np.sqrt(2.0 * theta)  # simulated standardized; _to_raw restores the scale
            n_obs = rng.poisson(config.rates[d] * H)
            times = np.unique(np.round(np.sort(rng.uniform(0.0, H, n_obs)) * 60.0) / 60.0)
            times = times[times <= H]
            grid = np.append(times, H)
            ou = np.empty(grid.size)
            x = rng.normal()
            prev = 0.0
            for k, t in enumerate(grid):
                dt = t - prev
                a = np.exp(-theta * dt)
                x = a * x + sigma * np.sqrt((1.0 - a * a) / (2.0 * theta)) * rng.normal()
                ou[k] = x
                prev = t
            z = ou
            if config.has_trend and d == config.trend_feature:
                z = ou + slope * (grid - H / 2.0)
            z_end[d] = ou[-1]
            raw = _to_raw(config, d, z[:-1])
            evs.extend(EventRecord(sid, float(t), f"x{d}", float(v)) for t, v in zip(times, raw))
        if not evs:
            d = int(rng.integers(D))
            evs.append(EventRecord(sid, 0.0, f"x{d}", float(_to_raw(config, d, 0.0))))
        evs.sort(key=lambda e: e.time)
        lo = config.intercept + sum(float(true_risk(config, d, z_end[d])) for d in range(D))
        if config.has_trend:
            lo += config.trend_coef * slope / config.trend_sd
        y = int(rng.uniform() < _sigmoid(lo / config.temperature))
        events[sid], labels[sid], log_odds[sid] = evs, y, lo
        finals[sid], slopes[sid] = z_end.tolist(), float(slope)
    return SynthDataset(config, events, labels, log_odds, finals, slopes)


def write_dataset(ds: SynthDataset, out_dir) -> list[Path]:
    """Write ``events.csv``, ``labels.csv`` and the ``truth.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path, labels_path, truth_path = out / "events.csv", out / "labels.csv", out / "truth.json"
    write_long_csv(events_path, ds.events)
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, y in ds.labels.items():
            w.writerow([sid, y])
    truth = {
        "schema_version": SCHEMA_VERSION,
        "config": ds.config.to_dict(),
        "risk_functions": [
            {"feature": f"x{d}", "kind": ds.config.risk[d], "scale": ds.config.risk_scale[d]} for d in range(ds.config.n_features)
        ],
        "trend": {"feature": ds.config.trend_feature, "coef": ds.config.trend_coef, "sd": ds.config.trend_sd},
        "log_odds": ds.log_odds,
        "slopes": ds.slopes,
    }
    truth_path.write_text(json.dumps(truth, indent=1), encoding="utf-8")
    return [events_path, labels_path, truth_path]


def read_truth(path) -> GeneratorConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in doc["config"].items()}
    return GeneratorConfig(**cfg)
