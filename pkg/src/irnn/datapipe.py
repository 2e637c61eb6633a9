"""From irregular event streams to aligned (values, elapsed, mask) grids.

Raw data arrives in long format, one measurement per row.  Each sample is turned
into a grid whose rows are the distinct observation times of that sample:

* ``values``  forward-filled, normalized, clipped to [-4, 4]; zero before the
  first observation of a feature (zero is the training mean after z-scoring)
* ``elapsed`` hours since the feature was last measured, divided by the
  feature's largest training gap and capped at 1; exactly 0 on measurement rows
* ``mask``    1 where the feature was actually measured
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ContractError, DataError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CLIP = 4.0
STD_FLOOR = 1e-6
SKEW_THRESHOLD = 3.0
MIN_MAX_ELAPSED = 1.0

PHYSIONET_FEATURES = [
    "ALP", "ALT", "AST", "Albumin", "BUN", "Bilirubin", "Cholesterol", "Creatinine",
    "DiasABP", "FiO2", "GCS", "Glucose", "HCO3", "HCT", "HR", "K", "Lactate", "MAP",
    "MechVent", "Mg", "NIDiasABP", "NIMAP", "NISysABP", "Na", "PaCO2", "PaO2",
    "Platelets", "RespRate", "SaO2", "SysABP", "Temp", "Urine", "WBC", "pH",
    "Age", "Gender", "Height", "ICUType", "AdmissionWeight",
]
PHYSIONET_DESCRIPTORS = ("Age", "Gender", "Height", "ICUType", "Weight")


@dataclass(frozen=True)
class EventRecord:
    sample_id: str
    time: float
    variable: str
    value: float


@dataclass(frozen=True)
class FeatureStats:
    name: str
    mean: float = 0.0
    std: float = 1.0
    apply_log: bool = False
    log_shift: float = 1.0
    max_elapsed: float = MIN_MAX_ELAPSED
    n_obs: int = 0

    @property
    def observed(self) -> bool:
        return self.n_obs > 0


@dataclass(frozen=True)
class NormStats:
    features: tuple[FeatureStats, ...]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __getitem__(self, name_or_index) -> FeatureStats:
        if isinstance(name_or_index, int):
            return self.features[name_or_index]
        for f in self.features:
            if f.name == name_or_index:
                return f
        raise KeyError(name_or_index)

    def __len__(self):
        return len(self.features)

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "features": [
                {
                    "name": f.name,
                    "mean": f.mean,
                    "std": f.std,
                    "apply_log": f.apply_log,
                    "log_shift": f.log_shift,
                    "max_elapsed": f.max_elapsed,
                    "n_obs": f.n_obs,
                }
                for f in self.features
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported NormStats schema_version {doc.get('schema_version')!r}")
        return cls(tuple(FeatureStats(**entry) for entry in doc["features"]))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class TimeSeriesSample:
    values: np.ndarray  # (T, D)
    elapsed: np.ndarray  # (T, D)
    mask: np.ndarray  # (T, D)
    valid_len: int
    label: int
    sample_id: str
    times: np.ndarray = field(default=None)  # (T,) hours, padding rows hold 0

    def __post_init__(self):
        if self.times is None:
            self.times = np.zeros(self.values.shape[0])

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# loading


def _parse_float(text, what, lineno):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: cannot parse {what} {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: {what} must be finite, got {text!r}")
    return v


def load_long_csv(path, known_variables: Iterable[str] | None = None) -> dict[str, list[EventRecord]]:
    """Read ``sample_id,time,variable,value`` rows grouped by sample.

    Events are sorted by time within each sample (stable, so equal times keep
    file order).  Variables outside ``known_variables`` are kept but logged.
    """
    groups: dict[str, list[EventRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}
        header = [h.strip() for h in header]
        if header != ["sample_id", "time", "variable", "value"]:
            raise DataError(f"line 1: expected header sample_id,time,variable,value, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            sid, t, var, v = (c.strip() for c in row)
            time = _parse_float(t, "time", lineno)
            if time < 0:
                raise DataError(f"line {lineno}: negative time {time}")
            value = _parse_float(v, "value", lineno)
            groups.setdefault(sid, []).append(EventRecord(sid, time, var, value))
    for events in groups.values():
        events.sort(key=lambda e: e.time)
    if known_variables is not None:
        known = set(known_variables)
        unknown = Counter(e.variable for evs in groups.values() for e in evs if e.variable not in known)
        if unknown:
            log.warning("unknown variables in %s: %s", path, dict(sorted(unknown.items())))
    return groups


def write_long_csv(path, groups: Mapping[str, Sequence[EventRecord]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "time", "variable", "value"])
        for events in groups.values():
            for e in events:
                w.writerow([e.sample_id, repr(e.time), e.variable, repr(e.value)])


def load_labels_csv(path) -> dict[str, int]:
    """Read a ``sample_id,label`` file (PhysioNet outcome files also accepted)."""
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        id_col = "sample_id" if "sample_id" in fields else "RecordID"
        label_col = "label" if "label" in fields else "In-hospital_death"
        if id_col not in fields or label_col not in fields:
            raise DataError(f"{path}: need columns sample_id,label or RecordID,In-hospital_death")
        for lineno, row in enumerate(reader, start=2):
            y = _parse_float(row[label_col], "label", lineno)
            if y not in (0.0, 1.0):
                raise DataError(f"line {lineno}: label must be 0 or 1, got {row[label_col]!r}")
            labels[row[id_col].strip()] = int(y)
    return labels


def load_plausibility_table(path=None) -> dict[str, tuple[float, float]]:
    if path is None:
        text = resources.files("irnn.data").joinpath("physionet_plausibility.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    table = {}
    for row in csv.DictReader(text.splitlines()):
        table[row["variable"]] = (float(row["min"]), float(row["max"]))
    return table


def _parse_hhmm(text, lineno):
    parts = text.split(":")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise DataError(f"line {lineno}: malformed time {text!r}, expected HH:MM")
    hh, mm = int(parts[0]), int(parts[1])
    if mm >= 60:
        raise DataError(f"line {lineno}: malformed time {text!r}, minutes >= 60")
    return hh + mm / 60.0


def load_physionet_record(path, drops: Counter | None = None, table=None) -> list[EventRecord]:
    """Parse one PhysioNet-2012 record file (``Time,Parameter,Value``).

    The ``RecordID`` line supplies the sample id.  The admission ``Weight``
    descriptor at 00:00 is renamed ``AdmissionWeight``.  Values outside the
    plausibility table (including the -1 "missing" marker) are dropped and
    counted in ``drops`` under the variable name.
    """
    table = load_plausibility_table() if table is None else table
    drops = Counter() if drops is None else drops
    path = Path(path)
    sample_id = path.stem
    events = []
    seen_admission_weight = False
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path.name} line {lineno}: expected 3 fields, got {len(row)}")
            t_text, var, v_text = (c.strip() for c in row)
            time = _parse_hhmm(t_text, lineno)
            value = _parse_float(v_text, "value", lineno)
            if var == "RecordID":
                sample_id = str(int(value))
                continue
            if var == "Weight" and time == 0.0 and not seen_admission_weight:
                var = "AdmissionWeight"
                seen_admission_weight = True
            lo, hi = table.get(var, (-math.inf, math.inf))
            if not lo <= value <= hi:
                drops[var] += 1
                continue
            events.append(EventRecord(sample_id, time, var, value))
    events = [EventRecord(sample_id, e.time, e.variable, e.value) for e in events]
    events.sort(key=lambda e: e.time)
    return events


def load_physionet_dir(record_dir, outcomes_path) -> tuple[dict[str, list[EventRecord]], dict[str, int], Counter]:
    """Load every ``*.txt`` record in a directory plus the outcomes file."""
    labels = load_labels_csv(outcomes_path)
    groups = {}
    drops = Counter()
    table = load_plausibility_table()
    for p in sorted(Path(record_dir).glob("*.txt")):
        events = load_physionet_record(p, drops, table)
        if events:
            groups[events[0].sample_id] = events
    log.info("physionet plausibility drops: %s", dict(drops))
    return groups, labels, drops


# ---------------------------------------------------------------------------
# normalization


def _log_transform(v, fs: FeatureStats):
    return np.log(np.asarray(v, dtype=np.float64) + fs.log_shift) if fs.apply_log else np.asarray(v, dtype=np.float64)


def fit_norm_stats(train_events: Mapping[str, Sequence[EventRecord]] | Iterable[Sequence[EventRecord]], feature_list: Sequence[str]) -> NormStats:
    """Fit per-feature statistics on the training samples only."""
    groups = list(train_events.values()) if isinstance(train_events, Mapping) else list(train_events)
    if not groups or not any(groups):
        raise DataError("cannot fit normalization statistics on an empty training set")
    values = defaultdict(list)
    gaps = defaultdict(float)
    for events in groups:
        last_time = {}
        for e in events:
            values[e.variable].append(e.value)
            if e.variable in last_time:
                gaps[e.variable] = max(gaps[e.variable], e.time - last_time[e.variable])
            last_time[e.variable] = e.time
    out = []
    for name in feature_list:
        v = np.asarray(values.get(name, []), dtype=np.float64)
        if v.size == 0:
            log.warning("feature %s never observed in training data", name)
            out.append(FeatureStats(name))
            continue
        skew = 0.0
        if v.size >= 3 and np.ptp(v) > 0:
            skew = float(sps.skew(v, bias=False))
        apply_log = abs(skew) > SKEW_THRESHOLD
        shift = max(0.0, -float(v.min())) + 1.0
        tv = np.log(v + shift) if apply_log else v
        std = float(np.std(tv, ddof=1)) if v.size > 1 else 0.0
        out.append(
            FeatureStats(
                name=name,
                mean=float(np.mean(tv)),
                std=max(std, STD_FLOOR),
                apply_log=apply_log,
                log_shift=shift,
                max_elapsed=max(gaps.get(name, 0.0), MIN_MAX_ELAPSED),
                n_obs=int(v.size),
            )
        )
    return NormStats(tuple(out))


def normalize(value, fs: FeatureStats):
    """Optional log, z-score, clip to [-4, 4].  Works on scalars and arrays."""
    z = (_log_transform(value, fs) - fs.mean) / fs.std
    z = np.clip(z, -CLIP, CLIP)
    return float(z) if np.ndim(z) == 0 else z


def denormalize(z, fs: FeatureStats):
    """Map normalized units back to raw units (inverse of the unclipped transform)."""
    v = np.asarray(z, dtype=np.float64) * fs.std + fs.mean
    if fs.apply_log:
        v = np.exp(v) - fs.log_shift
    return float(v) if np.ndim(v) == 0 else v


# ---------------------------------------------------------------------------
# grid construction


def build_sample(events: Sequence[EventRecord], stats: NormStats, label: int, max_len: int = 150, sample_id: str | None = None) -> TimeSeriesSample:
    """Build the padded (values, elapsed, mask) grid for one sample.

    Rows are the sample's distinct observation times.  When there are more than
    ``max_len`` of them the earliest rows are removed; forward-filled values and
    elapsed times in the kept rows still reflect the removed observations.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    index = {name: d for d, name in enumerate(stats.names)}
    events = [e for e in events if e.variable in index]
    if not events:
        raise DataError(f"sample {sample_id!r} has no events for known features")
    if sample_id is None:
        sample_id = events[0].sample_id
    grid = np.unique(np.fromiter((e.time for e in events), dtype=np.float64))
    T_full, D = grid.size, len(stats)
    values = np.zeros((T_full, D))
    elapsed = np.ones((T_full, D))
    mask = np.zeros((T_full, D))

    per_feature = defaultdict(dict)
    for e in events:
        per_feature[index[e.variable]][e.time] = e.value  # last value at a repeated time wins
    for d, obs in per_feature.items():
        fs = stats.features[d]
        t_obs = np.fromiter(obs.keys(), dtype=np.float64)
        order = np.argsort(t_obs)
        t_obs = t_obs[order]
        v_obs = np.asarray(normalize(np.fromiter(obs.values(), dtype=np.float64)[order], fs), dtype=np.float64)
        mask[np.searchsorted(grid, t_obs), d] = 1.0
        k = np.searchsorted(t_obs, grid, side="right") - 1
        seen = k >= 0
        kk = np.where(seen, k, 0)
        values[:, d] = np.where(seen, v_obs[kk], 0.0)
        elapsed[:, d] = np.where(seen, np.clip((grid - t_obs[kk]) / fs.max_elapsed, 0.0, 1.0), 1.0)

    if T_full > max_len:
        keep = slice(T_full - max_len, T_full)
        grid, values, elapsed, mask = grid[keep], values[keep], elapsed[keep], mask[keep]
    T = grid.size
    pad = max_len - T

    def padded(a):
        return np.vstack([a, np.zeros((pad, D))]) if pad else a

    return TimeSeriesSample(
        values=padded(values),
        elapsed=padded(elapsed),
        mask=padded(mask),
        valid_len=T,
        label=int(label),
        sample_id=str(sample_id),
        times=np.concatenate([grid, np.zeros(pad)]),
    )


# ---------------------------------------------------------------------------
# batched container


@dataclass
class SequenceSet:
    """Stacked samples sharing one padded length.  The unit of training and evaluation."""

    values: np.ndarray  # (N, T, D)
    elapsed: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray  # (N,) int
    labels: np.ndarray  # (N,) int
    ids: list[str]
    times: np.ndarray  # (N, T)
    feature_names: list[str]
    split: str = ""

    def __len__(self):
        return int(self.lengths.shape[0])

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_samples(cls, samples: Sequence[TimeSeriesSample], feature_names: Sequence[str], split: str = "") -> "SequenceSet":
        if not samples:
            raise DataError("no samples")
        T = max(s.values.shape[0] for s in samples)
        D = samples[0].n_features

        def stack(attr):
            out = np.zeros((len(samples), T, D))
            for i, s in enumerate(samples):
                a = getattr(s, attr)
                out[i, : a.shape[0]] = a
            return out

        times = np.zeros((len(samples), T))
        for i, s in enumerate(samples):
            times[i, : s.times.shape[0]] = s.times
        return cls(
            values=stack("values"),
            elapsed=stack("elapsed"),
            mask=stack("mask"),
            lengths=np.array([s.valid_len for s in samples], dtype=np.int64),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            ids=[s.sample_id for s in samples],
            times=times,
            feature_names=list(feature_names),
            split=split,
        )

    def sample(self, i: int) -> TimeSeriesSample:
        return TimeSeriesSample(
            values=self.values[i],
            elapsed=self.elapsed[i],
            mask=self.mask[i],
            valid_len=int(self.lengths[i]),
            label=int(self.labels[i]),
            sample_id=self.ids[i],
            times=self.times[i],
        )

    def samples(self):
        return [self.sample(i) for i in range(len(self))]

    def index_of(self, sample_id: str) -> int:
        try:
            return self.ids.index(str(sample_id))
        except ValueError:
            raise DataError(f"sample id {sample_id!r} not found") from None

    def subset(self, idx, split: str | None = None) -> "SequenceSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SequenceSet(
            values=self.values[idx],
            elapsed=self.elapsed[idx],
            mask=self.mask[idx],
            lengths=self.lengths[idx],
            labels=self.labels[idx],
            ids=[self.ids[i] for i in idx],
            times=self.times[idx],
            feature_names=self.feature_names,
            split=self.split if split is None else split,
        )

    def trimmed(self) -> "SequenceSet":
        """Drop trailing columns that are padding for every sample."""
        T = int(self.lengths.max()) if len(self) else 0
        if T == self.values.shape[1]:
            return self
        return SequenceSet(
            self.values[:, :T], self.elapsed[:, :T], self.mask[:, :T], self.lengths, self.labels,
            self.ids, self.times[:, :T], self.feature_names, self.split,
        )

    def save(self, path):
        np.savez_compressed(
            path,
            schema_version=SCHEMA_VERSION,
            values=self.values,
            elapsed=self.elapsed,
            mask=self.mask,
            lengths=self.lengths,
            labels=self.labels,
            ids=np.array(self.ids, dtype=str),
            times=self.times,
            feature_names=np.array(self.feature_names, dtype=str),
            split=np.array(self.split),
        )

    @classmethod
    def load(cls, path) -> "SequenceSet":
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing data file {path}")
        with np.load(path, allow_pickle=False) as z:
            if int(z["schema_version"]) != SCHEMA_VERSION:
                raise DataError(f"{path}: unsupported schema_version")
            return cls(
                values=z["values"],
                elapsed=z["elapsed"],
                mask=z["mask"],
                lengths=z["lengths"],
                labels=z["labels"],
                ids=[str(s) for s in z["ids"]],
                times=z["times"],
                feature_names=[str(s) for s in z["feature_names"]],
                split=str(z["split"]),
            )


def build_dataset(groups: Mapping[str, Sequence[EventRecord]], labels: Mapping[str, int], stats: NormStats, max_len: int = 150, split: str = "") -> SequenceSet:
    samples = []
    for sid, events in groups.items():
        if sid not in labels:
            raise DataError(f"no label for sample {sid!r}")
        samples.append(build_sample(events, stats, labels[sid], max_len, sample_id=sid))
    return SequenceSet.from_samples(samples, stats.names, split=split)


# ---------------------------------------------------------------------------
# splitting


def stratified_indices(labels, fractions: Sequence[float], seed: int) -> list[np.ndarray]:
    """Index partitions with per-class proportions matching ``fractions``."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or fractions.size == 0 or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ContractError(f"fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fractions]
    bounds = np.cumsum(fractions)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        cuts = np.rint(bounds * members.size).astype(int)
        cuts[-1] = members.size
        start = 0
        for k, stop in enumerate(cuts):
            if stop <= start:
                raise DataError(f"class {cls} absent from partition {k} at fractions {fractions.tolist()}")
            parts[k].append(members[start:stop])
            start = stop
    return [np.sort(np.concatenate(p)) for p in parts]


def split(dataset: SequenceSet, fractions: Sequence[float], seed: int, names: Sequence[str] | None = None) -> list[SequenceSet]:
    """Stratified, seeded partition of a dataset."""
    idx = stratified_indices(dataset.labels, fractions, seed)
    names = names or [f"part{k}" for k in range(len(idx))]
    return [dataset.subset(i, split=n) for i, n in zip(idx, names)]
