"""Mini-batch Adam training with global-norm clipping and early stopping on validation AUC."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, NumericError, UndefinedMetricError
from .kvconfig import as_bool, as_float, as_int, as_list, read_kv
from .metrics import auc
from .model import Model, init_model

log = logging.getLogger(__name__)

LEARNING_RATES = (0.01, 0.001, 0.0003)
CLIP_NORMS = (1.0, 10.0, 20.0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    clip_norm: float = 10.0
    batch_size: int = 512
    max_epochs: int = 200
    patience: int = 10
    adam_betas: tuple[float, float] = (0.9, 0.95)
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs", "must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigError("patience", "must be between 0 and max_epochs")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("adam_betas", "must lie in [0, 1)")


TRAIN_KEYS = {
    "learning_rate": as_float,
    "clip_norm": as_float,
    "batch_size": as_int,
    "max_epochs": as_int,
    "patience": as_int,
    "seed": as_int,
}
MODEL_KEYS = ("mu_diagonal", "mu_static", "gamma_diagonal")


@dataclass
class RunSettings:
    """Everything a training config file can hold."""

    train: TrainConfig = field(default_factory=TrainConfig)
    learning_rates: list[float] | None = None
    clip_norms: list[float] | None = None
    model_options: dict = field(default_factory=dict)


def load_run_settings(path) -> RunSettings:
    raw = read_kv(path)
    kw, opts = {}, {}
    lrs = clips = None
    for key, text in raw.items():
        if key in TRAIN_KEYS:
            kw[key] = TRAIN_KEYS[key](key, text)
        elif key == "adam_betas":
            betas = as_list(key, text)
            if len(betas) != 2:
                raise ConfigError(key, "expected two comma-separated values")
            kw[key] = tuple(betas)
        elif key == "learning_rates":
            lrs = as_list(key, text)
        elif key == "clip_norms":
            clips = as_list(key, text)
        elif key in MODEL_KEYS:
            opts[key] = as_bool(key, text)
        else:
            raise ConfigError(key, "unknown training config key")
    return RunSettings(TrainConfig(**kw), lrs, clips, opts)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def n_epochs(self) -> int:
        return len(self.val_auc)

    @property
    def best_val_auc(self) -> float:
        return self.val_auc[self.best_epoch]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_auc"])
            for i, (l, a) in enumerate(zip(self.train_loss, self.val_auc)):
                w.writerow([i, repr(l), repr(a)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        h = cls([float(r["train_loss"]) for r in rows], [float(r["val_auc"]) for r in rows])
        h.best_epoch = int(np.argmax(h.val_auc)) if rows else -1
        return h


def bce_loss(logit: float, label: int) -> float:
    """``max(l, 0) - l*y + log(1 + exp(-|l|))``."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    if not np.isfinite(logit):
        raise NumericError(f"non-finite logit {logit}")
    return float(max(logit, 0.0) - logit * label + np.log1p(np.exp(-abs(logit))))


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, clip_norm: float) -> dict:
    """Scale all gradients by ``clip_norm / norm`` when the global L2 norm exceeds ``clip_norm``."""
    if not clip_norm > 0:
        raise ContractError("clip_norm must be positive")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    s = clip_norm / norm
    return {k: g * s for k, g in grads.items()}


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.95), eps: float = 1e-8):
    """One bias-corrected Adam update.  Returns new ``(params, state)``; inputs are not mutated."""
    b1, b2 = betas
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[k] = np.asarray(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(t, new_m, new_v)


def validation_auc(model: Model, prep, impl=None) -> float:
    return auc(kernels.final_logits(model, prep, impl), prep.labels.astype(int))


def train_model(model, train, val, config: TrainConfig = TrainConfig(), impl=None, **model_options):
    """Fit ``model`` (a :class:`Model` or a kind name) and return the best-validation snapshot.

    The loss is the mean final-valid-step BCE over each mini-batch.  Training
    stops after ``max_epochs`` or once ``patience`` consecutive epochs (at
    least one) pass without a strict improvement in validation AUC.
    """
    if len(train) == 0 or len(val) == 0:
        raise ContractError("train and validation sets must be non-empty")
    if len(np.unique(val.labels)) < 2:
        raise UndefinedMetricError("validation set has a single class; AUC is undefined")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    if isinstance(model, str):
        model = init_model(model, train.n_features, np.random.default_rng(init_seq), train.feature_names, **model_options)
    else:
        model = model.copy()
    prep_train = kernels.prepare(model, train)
    prep_val = kernels.prepare(model, val)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    state = AdamState()
    history = TrainHistory()
    best = (-np.inf, None)
    n = len(prep_train)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            loss, grads = kernels.loss_and_grad(model, prep_train.take(idx), impl)
            grads = clip_gradients(grads, config.clip_norm)
            model.params, state = adam_step(model.params, grads, state, config.learning_rate, config.adam_betas)
            total += loss * idx.size
        val_auc = validation_auc(model, prep_val, impl)
        history.train_loss.append(total / n)
        history.val_auc.append(val_auc)
        log.debug("epoch %d loss %.5f val_auc %.4f", epoch, total / n, val_auc)
        if val_auc > best[0]:
            best = (val_auc, {k: v.copy() for k, v in model.params.items()})
            history.best_epoch = epoch
        elif epoch - history.best_epoch >= max(config.patience, 1):
            break
    model.params = best[1]
    return model, history


@dataclass
class GridCell:
    learning_rate: float
    clip_norm: float
    val_auc: float
    model: Model
    history: TrainHistory


def grid_search(kind, train, val, base: TrainConfig = TrainConfig(), learning_rates=LEARNING_RATES, clip_norms=CLIP_NORMS, jobs: int = 1, impl=None, **model_options):
    """Train one model per (learning rate, clip) cell; return ``(best_cell, all_cells)``.

    The winner has the highest validation AUC; ties go to the lower learning
    rate, then the lower clip norm.
    """
    cells = [(lr, c) for lr in learning_rates for c in clip_norms]
    if not cells:
        raise ContractError("empty hyperparameter grid")

    def run(cell):
        lr, c = cell
        m, h = train_model(kind, train, val, replace(base, learning_rate=lr, clip_norm=c), impl, **model_options)
        return GridCell(lr, c, h.best_val_auc, m, h)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    best = min(results, key=lambda r: (-r.val_auc, r.learning_rate, r.clip_norm))
    return best, results
