"""The repeated-split evaluation protocol.

A stratified test set is held out once.  Normalization statistics are fitted on
the remaining pool.  Each seed then splits the pool into train and validation,
trains (optionally over the lr x clip grid, selecting on validation AUC), and
scores the fixed test set.  Results are reported as mean (std) over seeds.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import datapipe, kernels
from .errors import DataError
from .metrics import EvalReport, evaluate_scores, mean_std
from .model import Model
from .train import TrainConfig, TrainHistory, grid_search, train_model

log = logging.getLogger(__name__)

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


@dataclass
class PreparedData:
    stats: datapipe.NormStats
    pool: datapipe.SequenceSet
    test: datapipe.SequenceSet


def prepare_data(events, labels, feature_names, seed: int = 0, max_len: int = 150, test_fraction: float = TEST_FRACTION) -> PreparedData:
    """Hold out a stratified test set, fit NormStats on the rest, build both grids."""
    ids = [sid for sid in events if sid in labels]
    missing = [sid for sid in events if sid not in labels]
    if missing:
        raise DataError(f"{len(missing)} samples have no label, e.g. {missing[0]!r}")
    y = np.array([labels[sid] for sid in ids])
    pool_idx, test_idx = datapipe.stratified_indices(y, (1.0 - test_fraction, test_fraction), seed)
    pool_ids = [ids[i] for i in pool_idx]
    test_ids = [ids[i] for i in test_idx]
    stats = datapipe.fit_norm_stats({sid: events[sid] for sid in pool_ids}, feature_names)
    pool = datapipe.build_dataset({sid: events[sid] for sid in pool_ids}, labels, stats, max_len, "pool")
    test = datapipe.build_dataset({sid: events[sid] for sid in test_ids}, labels, stats, max_len, "test")
    return PreparedData(stats, pool, test)


def seed_split(pool, seed: int, val_fraction: float = VAL_FRACTION):
    train, val = datapipe.split(pool, (1.0 - val_fraction, val_fraction), seed, ("train", "val"))
    return train, val


def score(model: Model, data, impl=None) -> np.ndarray:
    """Final-step logits for every sample."""
    return kernels.final_logits(model, kernels.prepare(model, data), impl)


@dataclass
class SeedResult:
    seed: int
    model: Model
    history: TrainHistory
    report: EvalReport
    learning_rate: float
    clip_norm: float


def run_seed(kind, pool, test, seed, base: TrainConfig = TrainConfig(), learning_rates=None, clip_norms=None, impl=None, **model_options) -> SeedResult:
    train, val = seed_split(pool, seed)
    cfg = replace(base, seed=seed)
    lrs = list(learning_rates) if learning_rates else [cfg.learning_rate]
    clips = list(clip_norms) if clip_norms else [cfg.clip_norm]
    if len(lrs) * len(clips) == 1:
        cfg = replace(cfg, learning_rate=lrs[0], clip_norm=clips[0])
        model, history = train_model(kind, train, val, cfg, impl, **model_options)
    else:
        best, _ = grid_search(kind, train, val, cfg, lrs, clips, 1, impl, **model_options)
        model, history, cfg = best.model, best.history, replace(cfg, learning_rate=best.learning_rate, clip_norm=best.clip_norm)
    report = evaluate_scores(score(model, test, impl), test.labels)
    log.info("%s seed %d: val %.4f test %.4f (%d epochs)", kind, seed, history.best_val_auc, report.auc, history.n_epochs)
    return SeedResult(seed, model, history, report, cfg.learning_rate, cfg.clip_norm)


def run_seeds(kind, pool, test, seeds, base: TrainConfig = TrainConfig(), learning_rates=None, clip_norms=None, jobs: int = 1, impl=None, **model_options) -> list[SeedResult]:
    """One :func:`run_seed` per seed, fanned out over ``jobs`` threads; results keep seed order."""

    def one(s):
        return run_seed(kind, pool, test, s, base, learning_rates, clip_norms, impl, **model_options)

    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            return list(pool_exec.map(one, seeds))
    return [one(s) for s in seeds]


def summarize(results: list[SeedResult]) -> dict:
    aucs = [r.report.auc for r in results]
    return {
        "seeds": [r.seed for r in results],
        "auc": aucs,
        "auc_mean": float(np.mean(aucs)),
        "auc_std": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0,
        "auc_cell": mean_std(aucs),
        "ppv_cell": mean_std([r.report.ppv for r in results]),
        "specificity_cell": mean_std([r.report.specificity for r in results]),
    }
