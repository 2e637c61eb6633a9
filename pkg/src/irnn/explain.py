"""Interpretability artifacts for a trained I-RNN, exported as plain data.

The additive head gives, at every valid step ``t`` and feature ``d``, a
contribution ``c[t, d] = w_out[d] * h_hat[t, d]`` in log-odds units with
``logit[t] = b_out + sum_d c[t, d]``.  Everything here is built from those
numbers:

* local traces ``(t, c[t, d])`` for one sample
* ``u[d]``, the time average of ``c[:, d]`` over the valid steps of a sample
* global importance, the mean of ``|u[d]|`` over samples
* risk curves pairing a feature value with ``u[d]``
* decay curves ``gamma_d(delta)`` of the learned elapsed-time rectifier
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .datapipe import NormStats, denormalize
from .errors import ContractError, DataError, UnsupportedModelError
from .model import Model, irnn_forward

SCHEMA_VERSION = 1
DEFAULT_BINS = 20
DEFAULT_SPAN = 0.3


def _require_irnn(model: Model):
    if model.kind != "irnn":
        raise UnsupportedModelError(f"explanations need an irnn model, got {model.kind}")


def _feature_index(model: Model, feature) -> int:
    if isinstance(feature, (int, np.integer)):
        d = int(feature)
        if not 0 <= d < model.n_features:
            raise ContractError(f"feature index {d} out of range for D={model.n_features}")
        return d
    try:
        return model.feature_names.index(feature)
    except ValueError:
        raise ContractError(f"unknown feature {feature!r}") from None


# ---------------------------------------------------------------------------
# local traces


@dataclass
class ContributionTrace:
    sample_id: str
    times: np.ndarray  # (T,)
    contributions: np.ndarray  # (T, D)
    logits: np.ndarray  # (T,)
    bias: float
    feature_names: list[str]

    def additivity_error(self) -> float:
        if self.logits.size == 0:
            return 0.0
        return float(np.max(np.abs(self.logits - self.bias - self.contributions.sum(axis=1))))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "logit"] + [f"c_{n}" for n in self.feature_names])
            for t, l, c in zip(self.times, self.logits, self.contributions):
                w.writerow([repr(float(t)), repr(float(l))] + [repr(float(v)) for v in c])

    @classmethod
    def from_csv(cls, path, sample_id="", bias=0.0) -> "ContributionTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
        names = [h[2:] for h in header[2:]]
        return cls(sample_id, body[:, 0], body[:, 2:], body[:, 1], float(bias), names)


def local_trace(model: Model, sample) -> ContributionTrace:
    """Per-step contributions and logits over the valid steps of one sample."""
    _require_irnn(model)
    tr = irnn_forward(model, sample)
    T = int(sample.valid_len)
    times = np.asarray(sample.times, dtype=np.float64)[:T]
    return ContributionTrace(str(sample.sample_id), times, tr.contributions, tr.logits, tr.bias, list(model.feature_names))


def time_average(trace) -> np.ndarray:
    """``u[d]``: mean contribution of each feature over the valid steps."""
    c = trace.contributions if isinstance(trace, ContributionTrace) else np.asarray(trace, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ContractError("time_average needs at least one valid step")
    return c.mean(axis=0)


def sample_averages(model: Model, data, impl=None):
    """``u`` for every sample (N, D) plus the per-step contributions (N, T, D), padding zeroed."""
    _require_irnn(model)
    if len(data) == 0:
        raise ContractError("empty dataset")
    data = data.trimmed()
    c = kernels.irnn_internals(model, data, impl)["contributions"]
    u = c.sum(axis=1) / data.lengths[:, None]
    return u, c


# ---------------------------------------------------------------------------
# global importance


@dataclass
class GlobalImportance:
    ranking: list[tuple[str, float]]  # descending

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.ranking]

    def value(self, name) -> float:
        return dict(self.ranking)[name]

    def rank(self, name) -> int:
        return self.names.index(name)

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": SCHEMA_VERSION, "importance": [{"feature": n, "mean_abs_u": v} for n, v in self.ranking]},
            indent=2,
        )


def importance_from_u(u, names) -> GlobalImportance:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise ContractError("need at least one sample")
    vals = np.abs(u).mean(axis=0)
    order = sorted(range(len(names)), key=lambda d: (-vals[d], d))
    return GlobalImportance([(names[d], float(vals[d])) for d in order])


def global_importance(model: Model, data, impl=None) -> GlobalImportance:
    """Features ranked by the mean over samples of ``|u[d]|``; ties keep feature order."""
    u, _ = sample_averages(model, data, impl)
    return importance_from_u(u, list(model.feature_names))


# ---------------------------------------------------------------------------
# risk curves


def lowess(x, y, at, span: float = DEFAULT_SPAN):
    """Tricube-weighted local linear regression of ``y`` on ``x`` evaluated at ``at``.

    Each fit uses the ``floor(span * n)`` points nearest the evaluation point,
    with the bandwidth set to the distance of the farthest of them.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    at = np.atleast_1d(np.asarray(at, dtype=np.float64))
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise ContractError("lowess needs matching non-empty 1-D x and y")
    if not 0 < span <= 1:
        raise ContractError("span must lie in (0, 1]")
    n = x.size
    k = min(n, max(2, int(span * n + 1e-10)))
    out = np.empty(at.size)
    for i, x0 in enumerate(at):
        dist = np.abs(x - x0)
        h = np.partition(dist, k - 1)[k - 1]
        if h <= 0:
            out[i] = y[dist == 0].mean()
            continue
        w = np.clip(1.0 - (dist / h) ** 3, 0.0, None) ** 3
        sw = w.sum()
        xm = (w * x).sum() / sw
        ym = (w * y).sum() / sw
        sxx = (w * (x - xm) ** 2).sum()
        if sxx <= 1e-12 * sw:
            out[i] = ym
        else:
            out[i] = ym + (w * (x - xm) * (y - ym)).sum() / sxx * (x0 - xm)
    return out


def equal_frequency_bins(x, n_bins: int) -> np.ndarray:
    """Bin index for every point.  Edges are quantiles, so tied values share a bin
    and the assignment does not depend on point order.  Fewer bins come back when
    there are fewer distinct values than ``n_bins``."""
    x = np.asarray(x, dtype=np.float64)
    if n_bins < 1:
        raise ContractError("n_bins must be >= 1")
    qs = np.quantile(x, np.arange(1, n_bins) / n_bins, method="inverted_cdf")
    edges = np.unique(qs)
    idx = np.searchsorted(edges, x, side="left")  # bin k holds edges[k-1] < x <= edges[k]
    _, dense = np.unique(idx, return_inverse=True)
    return dense


@dataclass
class RiskCurve:
    feature: str
    centers: np.ndarray  # normalized units
    centers_raw: np.ndarray | None
    mean_contribution: np.ndarray
    counts: np.ndarray
    smoothed: np.ndarray | None = None
    pooling: str = "last"
    n_points: int = 0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def arr(a):
            return None if a is None else [float(v) for v in a]

        doc = {
            "schema_version": SCHEMA_VERSION,
            "feature": self.feature,
            "pooling": self.pooling,
            "n_points": self.n_points,
            "bins": [
                {
                    "center": float(self.centers[k]),
                    "center_raw": None if self.centers_raw is None else float(self.centers_raw[k]),
                    "mean_contribution": float(self.mean_contribution[k]),
                    "count": int(self.counts[k]),
                    "smoothed": None if self.smoothed is None else float(self.smoothed[k]),
                }
                for k in range(len(self.centers))
            ],
            "center": arr(self.centers),
            "center_raw": arr(self.centers_raw),
            "mean_contribution": arr(self.mean_contribution),
            "count": [int(c) for c in self.counts],
            "smoothed": arr(self.smoothed),
        }
        return json.dumps(doc, indent=1)


def risk_points(model: Model, data, d: int, per_timestep: bool = False, impl=None):
    """The (feature value, contribution) pairs a risk curve is built from.

    Default: one pair per sample, its last observed normalized value of ``d``
    and ``u[d]``.  Samples where ``d`` is never measured inside the kept window
    are skipped.  With ``per_timestep`` every valid step from the first
    measurement on gives a pair (carried value, ``c[t, d]``).
    """
    data = data.trimmed()
    u, c = sample_averages(model, data, impl)
    T = data.values.shape[1]
    valid = np.arange(T)[None, :] < data.lengths[:, None]
    seen = (np.cumsum(data.mask[:, :, d], axis=1) > 0) & valid
    if per_timestep:
        return data.values[:, :, d][seen], c[:, :, d][seen]
    has = seen.any(axis=1)
    last = data.values[np.arange(len(data)), data.lengths - 1, d]
    return last[has], u[has, d]


def risk_curve(
    model: Model,
    data,
    feature,
    n_bins: int = DEFAULT_BINS,
    stats: NormStats | None = None,
    smooth: bool = False,
    span: float = DEFAULT_SPAN,
    per_timestep: bool = False,
    impl=None,
) -> RiskCurve:
    """Mean contribution in equal-frequency bins of the feature value."""
    _require_irnn(model)
    d = _feature_index(model, feature)
    x, y = risk_points(model, data, d, per_timestep, impl)
    if x.size == 0:
        raise DataError(f"feature {model.feature_names[d]!r} is never observed in the dataset")
    b = equal_frequency_bins(x, n_bins)
    k = int(b.max()) + 1
    counts = np.bincount(b, minlength=k)
    centers = np.bincount(b, weights=x, minlength=k) / counts
    means = np.bincount(b, weights=y, minlength=k) / counts
    raw = None
    if stats is not None:
        raw = np.asarray(denormalize(centers, stats[model.feature_names[d]]), dtype=np.float64).reshape(-1)
    sm = lowess(x, y, centers, span) if smooth else None
    return RiskCurve(
        model.feature_names[d], centers, raw, means, counts, sm, "timestep" if per_timestep else "last", int(x.size)
    )


# ---------------------------------------------------------------------------
# decay curves


@dataclass
class DecayCurve:
    feature: str
    delta: np.ndarray
    gamma: np.ndarray
    hours: np.ndarray | None = None

    def retention(self) -> np.ndarray:
        """Fraction of the deviation from the baseline kept, ``exp(-gamma)``."""
        return np.exp(-self.gamma)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "feature": self.feature,
                "delta": [float(v) for v in self.delta],
                "hours": None if self.hours is None else [float(v) for v in self.hours],
                "gamma": [float(v) for v in self.gamma],
            },
            indent=1,
        )


def decay_curve(model: Model, feature, grid=None, stats: NormStats | None = None) -> DecayCurve:
    """``gamma_d(delta) = max(0, w_gamma[d] * delta + b_gamma[d])`` on a grid of scaled elapsed times."""
    _require_irnn(model)
    if np.ndim(model.params["w_gamma"]) != 1:
        raise UnsupportedModelError("decay curves need a diagonal gamma (per-feature decay)")
    d = _feature_index(model, feature)
    delta = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=np.float64)
    gamma = np.maximum(0.0, model.params["w_gamma"][d] * delta + model.params["b_gamma"][d])
    hours = None
    if stats is not None:
        hours = delta * stats[model.feature_names[d]].max_elapsed
    return DecayCurve(model.feature_names[d], delta, gamma, hours)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(obj.to_json(), encoding="utf-8")
    return path
