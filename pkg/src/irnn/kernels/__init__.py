"""Batched forward/backward kernels with a compiled core and a numpy fallback.

The compiled extension ``_cy`` is used when it imports; otherwise, or when the
environment variable ``IRNN_KERNELS=numpy`` is set, the pure numpy versions in
``_numpy`` are used.  Both expose the same four functions:
``irnn_forward``, ``irnn_backward``, ``gru_forward``, ``gru_backward``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, UnsupportedModelError
from . import _numpy

try:
    if os.environ.get("IRNN_KERNELS", "").lower() in ("numpy", "python"):
        raise ImportError("compiled kernels disabled by IRNN_KERNELS")
    from . import _cy as _default
    BACKEND = "cython"
except ImportError:
    _default = _numpy
    BACKEND = "numpy"


def get_backend(name: str | None = None):
    """Return the kernel module called ``name`` ("cython" or "numpy"), or the default."""
    if name is None:
        return _default
    if name == "numpy":
        return _numpy
    if name == "cython":
        from . import _cy

        return _cy
    raise ValueError(f"unknown kernel backend {name!r}")


@dataclass
class Prepared:
    """Model-specific input arrays for a dataset, ready for the kernels."""

    kind: str
    inputs: tuple  # irnn: (X, DL); gru: (U,); logistic: (S,)
    lengths: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return int(self.lengths.shape[0])

    def take(self, idx) -> "Prepared":
        idx = np.asarray(idx)
        lengths = self.lengths[idx]
        if self.kind == "logistic":
            return Prepared(self.kind, (self.inputs[0][idx],), lengths, self.labels[idx])
        T = int(lengths.max())
        return Prepared(self.kind, tuple(a[idx, :T] for a in self.inputs), lengths, self.labels[idx])


def prepare(model, data) -> Prepared:
    from ..model import summarize_set

    data = data.trimmed()
    if model.kind == "irnn":
        inputs = (np.ascontiguousarray(data.values), np.ascontiguousarray(data.elapsed))
    elif model.kind == "gru_forward":
        inputs = (np.ascontiguousarray(data.values),)
    elif model.kind == "gru_simple":
        inputs = (np.ascontiguousarray(np.concatenate([data.values, data.elapsed, data.mask], axis=2)),)
    elif model.kind == "logistic":
        inputs = (summarize_set(data),)
    else:
        raise UnsupportedModelError(model.kind)
    return Prepared(model.kind, inputs, np.asarray(data.lengths, dtype=np.int64), np.asarray(data.labels, dtype=np.float64))


def forward_all(model, prep: Prepared, impl=None):
    """Per-step logits (N, T) plus whatever internals the backward pass needs."""
    impl = impl or _default
    if prep.kind == "irnn":
        X, DL = prep.inputs
        h, hh, mu, g, logits = impl.irnn_forward(model.params, X, DL, prep.lengths, model.mu_static)
        return logits, (h, hh, mu, g)
    if prep.kind in ("gru_forward", "gru_simple"):
        h, logits = impl.gru_forward(model.params, prep.inputs[0], prep.lengths)
        return logits, (h,)
    S = prep.inputs[0]
    return (S @ model.params["w"] + model.params["b"])[:, None], ()


def final_logits(model, prep: Prepared, impl=None) -> np.ndarray:
    logits, _ = forward_all(model, prep, impl)
    if prep.kind == "logistic":
        return logits[:, 0]
    return logits[np.arange(len(prep)), prep.lengths - 1]


def bce_terms(logits, labels):
    loss = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    e = np.exp(-np.abs(logits))
    p = np.where(logits >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return loss, p - labels


def loss_and_grad(model, prep: Prepared, impl=None):
    """Mean final-step BCE over the batch and its gradient for every parameter."""
    impl = impl or _default
    logits, cache = forward_all(model, prep, impl)
    if prep.kind == "logistic":
        final = logits[:, 0]
    else:
        final = logits[np.arange(len(prep)), prep.lengths - 1]
    if not np.all(np.isfinite(final)):
        raise NumericError("non-finite logits")
    losses, dlogit = bce_terms(final, prep.labels)
    n = len(prep)
    dlogit = dlogit / n
    if prep.kind == "irnn":
        X, DL = prep.inputs
        grads = impl.irnn_backward(model.params, X, DL, prep.lengths, *cache, dlogit, model.mu_static)
    elif prep.kind in ("gru_forward", "gru_simple"):
        grads = impl.gru_backward(model.params, prep.inputs[0], prep.lengths, cache[0], dlogit)
    else:
        S = prep.inputs[0]
        grads = {"w": S.T @ dlogit, "b": np.array(dlogit.sum())}
    return float(losses.mean()), grads


def irnn_internals(model, data, impl=None) -> dict:
    """Batched I-RNN internals, each (N, T, D) and zero past each valid length."""
    if model.kind != "irnn":
        raise UnsupportedModelError(f"internals are defined for irnn only, got {model.kind}")
    impl = impl or _default
    X = np.ascontiguousarray(data.values)
    DL = np.ascontiguousarray(data.elapsed)
    h, hh, mu, g, logits = impl.irnn_forward(model.params, X, DL, np.asarray(data.lengths, dtype=np.int64), model.mu_static)
    valid = (np.arange(X.shape[1])[None, :] < data.lengths[:, None])[:, :, None]
    contributions = hh * model.params["w_out"] * valid
    return {"h": h, "h_hat": hh, "mu": mu, "gamma": g, "logits": logits, "contributions": contributions}
