"""``irnn`` command line: synth, prepare, train, evaluate, explain, compare.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric error.  Every command writes a ``manifest.json`` listing its inputs,
seeds and a sha256 for every file it produced.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import datapipe, experiment, explain, synth
from .errors import ConfigError, ContractError, DataError, NumericError, UndefinedMetricError, UnsupportedModelError
from .metrics import evaluate_scores, mean_std
from .model import MODEL_KINDS, Model
from .train import CLIP_NORMS, LEARNING_RATES, RunSettings, load_run_settings

log = logging.getLogger("irnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCHEMA_VERSION = 1
PREPARED_FILES = ("pool.npz", "test.npz", "norm_stats.json")


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seeds, inputs, model_kind=None) -> Path:
    """Checksums cover everything under ``out`` except the manifest itself."""
    artifacts = {
        p.relative_to(out).as_posix(): sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seeds": list(seeds),
        "inputs": {str(p): sha256(p) for p in inputs if Path(p).is_file()},
        "model_kind": model_kind,
        "output_dir": str(out),
        "artifacts": artifacts,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def write_json(path, doc):
    Path(path).write_text(json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, default=_json_default), encoding="utf-8")


def _require_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"missing data directory {p}")
    return p


def load_prepared(data_dir):
    d = _require_dir(data_dir)
    for name in PREPARED_FILES:
        if not (d / name).exists():
            raise DataError(f"{d / name} not found; run 'irnn prepare' first")
    return datapipe.SequenceSet.load(d / "pool.npz"), datapipe.SequenceSet.load(d / "test.npz"), datapipe.NormStats.load(d / "norm_stats.json")


def load_split(path) -> tuple[datapipe.SequenceSet, datapipe.NormStats | None]:
    """A ``.npz`` grid, or a prepared directory (its test split)."""
    p = Path(path)
    if p.is_dir():
        _, test, stats = load_prepared(p)
        return test, stats
    if not p.exists():
        raise DataError(f"missing data file {p}")
    data = datapipe.SequenceSet.load(p)
    stats_path = p.parent / "norm_stats.json"
    return data, datapipe.NormStats.load(stats_path) if stats_path.exists() else None


def _warn_provenance(data):
    if data.split in ("train", "pool"):
        log.warning("evaluating on the %r split, which overlaps training data; the score is optimistic", data.split)


def _weight_files(path) -> list[Path]:
    p = Path(path)
    return sorted(p.glob("seed_*/weights.json")) if p.is_dir() else [p]


def load_weights(path) -> list[tuple[str, Model]]:
    """One weights file, or every ``seed_*/weights.json`` under a training output directory."""
    p = Path(path)
    if p.is_dir():
        files = _weight_files(p)
        if not files:
            raise DataError(f"no seed_*/weights.json under {p}")
        return [(f.parent.name, Model.load(f)) for f in files]
    return [(p.stem, Model.load(p))]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg = synth.load_generator_config(args.config, **overrides) if args.config else synth.GeneratorConfig(**overrides)
    out = Path(args.out)
    ds = synth.generate(cfg)
    synth.write_dataset(ds, out)
    write_manifest(out, "synth", cfg.to_dict(), [cfg.seed], [args.config] if args.config else [])
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    src = _require_dir(args.source)
    drops = None
    if args.physionet:
        outcomes = Path(args.outcomes) if args.outcomes else None
        if outcomes is None:
            raise ConfigError("outcomes", "--physionet needs --outcomes FILE")
        events, labels, drops = datapipe.load_physionet_dir(src, outcomes)
        features = list(datapipe.PHYSIONET_FEATURES)
        inputs = [outcomes]
    else:
        events_path, labels_path = src / "events.csv", src / "labels.csv"
        for p in (events_path, labels_path):
            if not p.exists():
                raise DataError(f"missing {p}")
        events = datapipe.load_long_csv(events_path)
        labels = datapipe.load_labels_csv(labels_path)
        truth = src / "truth.json"
        features = synth.read_truth(truth).feature_names if truth.exists() else sorted({e.variable for evs in events.values() for e in evs})
        inputs = [events_path, labels_path]
    prepared = experiment.prepare_data(events, labels, features, seed=args.seed or 0, max_len=args.max_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared.pool.save(out / "pool.npz")
    prepared.test.save(out / "test.npz")
    prepared.stats.save(out / "norm_stats.json")
    if drops:
        write_json(out / "dropped_values.json", {"dropped": dict(sorted(drops.items()))})
    config = {"max_len": args.max_len, "seed": args.seed or 0, "test_fraction": experiment.TEST_FRACTION, "physionet": bool(args.physionet)}
    write_manifest(out, "prepare", config, [args.seed or 0], inputs)
    print(f"pool {len(prepared.pool)} samples, test {len(prepared.test)} samples -> {out}")
    return EXIT_OK


def _grid(settings: RunSettings, raw_keys: set):
    """Explicit grid lists win; a single lr / clip in the config pins that axis; otherwise the full grid."""
    lrs = settings.learning_rates or ([settings.train.learning_rate] if "learning_rate" in raw_keys else list(LEARNING_RATES))
    clips = settings.clip_norms or ([settings.train.clip_norm] if "clip_norm" in raw_keys else list(CLIP_NORMS))
    return lrs, clips


def cmd_train(args) -> int:
    pool, test, stats = load_prepared(args.data)
    if args.config:
        from .kvconfig import read_kv

        settings, keys = load_run_settings(args.config), set(read_kv(args.config))
    else:
        settings, keys = RunSettings(), set()
    lrs, clips = _grid(settings, keys)
    master = args.seed if args.seed is not None else settings.train.seed
    seeds = [master + i for i in range(args.seeds)]
    results = experiment.run_seeds(
        args.model, pool, test, seeds, settings.train, lrs, clips, args.jobs, **settings.model_options
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        sd = out / f"seed_{r.seed}"
        sd.mkdir(exist_ok=True)
        r.model.save(sd / "weights.json")
        r.history.to_csv(sd / "history.csv")
        (sd / "report.json").write_text(r.report.to_json(), encoding="utf-8")
    summary = {"model": args.model, "learning_rates": [r.learning_rate for r in results], "clip_norms": [r.clip_norm for r in results]}
    summary.update(experiment.summarize(results))
    write_json(out / "summary.json", summary)
    config = {**asdict(settings.train), "learning_rates": lrs, "clip_norms": clips, "model_options": settings.model_options, "master_seed": master}
    write_manifest(out, "train", config, seeds, [Path(args.data) / n for n in PREPARED_FILES] + ([args.config] if args.config else []), args.model)
    print(f"{args.model}: test AUC {summary['auc_cell']} over {len(seeds)} seed(s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data, _ = load_split(args.data)
    _warn_provenance(data)
    models = load_weights(args.weights)
    reports = []
    for name, m in models:
        reports.append((name, evaluate_scores(experiment.score(m, data), data.labels)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in reports:
        (out / f"report_{name}.json").write_text(rep.to_json(), encoding="utf-8")
    kind = models[0][1].kind
    row = {"model": kind, "auc": mean_std([r.auc for _, r in reports]), "ppv": mean_std([r.ppv for _, r in reports]), "specificity": mean_std([r.specificity for _, r in reports])}
    with open(out / "comparison_row.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    write_manifest(out, "evaluate", {"weights": str(args.weights), "data": str(args.data)}, [], [args.data, *_weight_files(args.weights)], kind)
    print(f"{kind}: AUC {row['auc']}")
    return EXIT_OK


def cmd_explain(args) -> int:
    data, stats = load_split(args.data)
    if args.stats:
        stats = datapipe.NormStats.load(args.stats)
    models = load_weights(args.weights)
    model = models[0][1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did = False
    if args.sample:
        trace = explain.local_trace(model, data.sample(data.index_of(args.sample)))
        trace.to_csv(out / f"trace_{args.sample}.csv")
        did = True
    if args.global_importance:
        explain.write_json(explain.global_importance(model, data), out / "importance.json")
        did = True
    if args.risk_curves:
        for name in model.feature_names:
            try:
                curve = explain.risk_curve(model, data, name, args.bins, stats, args.smooth, per_timestep=args.per_timestep)
            except DataError as exc:
                log.warning("skipping risk curve: %s", exc)
                continue
            explain.write_json(curve, out / f"risk_{name}.json")
        did = True
    if args.decay:
        for name in model.feature_names:
            explain.write_json(explain.decay_curve(model, name, stats=stats), out / f"decay_{name}.json")
        did = True
    if not did:
        raise ContractError("nothing to do: pass --sample, --global, --risk-curves or --decay")
    config = {k: getattr(args, k) for k in ("sample", "global_importance", "risk_curves", "decay", "bins", "smooth", "per_timestep")}
    write_manifest(out, "explain", config, [], [args.data, *_weight_files(args.weights)], model.kind)
    print(f"wrote explanations to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for run in args.runs:
        p = Path(run) / "summary.json"
        if not p.exists():
            raise DataError(f"missing {p}")
        s = json.loads(p.read_text(encoding="utf-8"))
        rows.append({"model": s["model"], "auc": s["auc_cell"], "ppv": s["ppv_cell"], "specificity": s["specificity_cell"], "n_seeds": len(s["seeds"])})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    write_manifest(out, "compare", {"runs": [str(r) for r in args.runs]}, [], [Path(r) / "summary.json" for r in args.runs])
    for r in rows:
        print(f"{r['model']:<12} {r['auc']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irnn", description="Interpretable recurrent risk models for irregular clinical time series.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with known risk functions")
    p.add_argument("--config", help="generator config (key = value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="hold out a test set, fit normalization, build grids")
    p.add_argument("source", help="directory with events.csv and labels.csv, or PhysioNet record directory")
    p.add_argument("--physionet", action="store_true", help="source is a PhysioNet-2012 record directory")
    p.add_argument("--outcomes", help="PhysioNet outcomes file (with --physionet)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=150)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model kind over several split seeds")
    p.add_argument("data", help="prepared directory")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--config", help="training config (key = value)")
    p.add_argument("--seed", type=int, help="master seed; split seeds are seed, seed+1, ...")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score weights on a dataset")
    p.add_argument("weights", help="weights.json or a training output directory")
    p.add_argument("data", help="a .npz grid or a prepared directory (uses its test split)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="export contribution traces, importance, risk and decay curves")
    p.add_argument("weights", help="weights.json (or a training directory: its first seed)")
    p.add_argument("data", help="a .npz grid or a prepared directory (uses its test split)")
    p.add_argument("--sample", help="sample id for a local trace")
    p.add_argument("--global", dest="global_importance", action="store_true", help="global importance ranking")
    p.add_argument("--risk-curves", action="store_true")
    p.add_argument("--decay", action="store_true")
    p.add_argument("--bins", type=int, default=explain.DEFAULT_BINS)
    p.add_argument("--smooth", action="store_true", help="add a LOWESS curve to each risk curve")
    p.add_argument("--per-timestep", action="store_true", help="pool every step instead of each sample's last value")
    p.add_argument("--stats", help="norm_stats.json for raw-unit axes (default: next to the data)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="tabulate mean (std) test metrics of several training runs")
    p.add_argument("runs", nargs="+", help="training output directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, UnsupportedModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
