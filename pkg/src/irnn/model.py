"""I-RNN and baseline models expressed on the :mod:`irnn.ndcore` tape.

Parameters are kept as a flat ``name -> float64 array`` mapping inside a
:class:`Model`.  I-RNN names follow the gate equations: ``w_ir w_iz w_in``
(input diagonals), ``w_hr w_hz w_hn`` (recurrent diagonals), ``b_r b_z b_n``,
``w_mu b_mu`` (baseline; absent when the baseline is static), ``w_gamma
b_gamma`` (decay rate) and ``w_out b_out`` (additive head).  Dense GRU
baselines use capitalised matrices ``W_ir`` ... ``W_hn``.

The functions in this module evaluate one sample at a time and are the
reference path; batched training goes through :mod:`irnn.kernels`.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .errors import ContractError, DataError, DimensionError, UnsupportedModelError

SCHEMA_VERSION = 1
MODEL_KINDS = ("irnn", "gru_forward", "gru_simple", "logistic")
RECURRENT_KINDS = ("irnn", "gru_forward", "gru_simple")
N_SUMMARY = 6
SUMMARY_NAMES = ("max", "min", "mean", "first", "last", "var")

GRU_DIAG = ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn")
GRU_BIAS = ("b_r", "b_z", "b_n")


@dataclass
class Model:
    kind: str
    n_features: int
    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    feature_names: list[str] | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise UnsupportedModelError(f"unknown model kind {self.kind!r}")
        if self.feature_names is None:
            self.feature_names = [f"x{d}" for d in range(self.n_features)]

    @property
    def mu_static(self) -> bool:
        return bool(self.config.get("mu_static", False))

    @property
    def input_width(self) -> int:
        return {"gru_simple": 3 * self.n_features, "logistic": N_SUMMARY * self.n_features}.get(self.kind, self.n_features)

    def copy(self) -> "Model":
        return Model(self.kind, self.n_features, {k: v.copy() for k, v in self.params.items()}, dict(self.config), list(self.feature_names))

    # serialization -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "model_kind": self.kind,
            "D": self.n_features,
            "config": self.config,
            "feature_names": self.feature_names,
            # json writes floats with repr(), which round-trips float64 exactly
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in self.params.items()},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Model":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported model schema_version {doc.get('schema_version')!r}")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
        return cls(doc["model_kind"], int(doc["D"]), params, doc.get("config", {}), doc.get("feature_names"))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Model":
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing weights file {path}")
        return cls.from_json(path.read_text(encoding="utf-8"))


def init_model(kind: str, n_features: int, rng=None, feature_names=None, mu_diagonal=True, mu_static=False, gamma_diagonal=True) -> Model:
    """Fresh parameters: weights ~ U(-1/sqrt(D), 1/sqrt(D)), biases 0, ``b_gamma`` 0.1."""
    if n_features < 1:
        raise ContractError("n_features must be >= 1")
    rng = np.random.default_rng(rng)
    D = n_features
    a = 1.0 / np.sqrt(D)

    def u(*shape):
        return rng.uniform(-a, a, size=shape)

    p: dict[str, np.ndarray] = {}
    config = {}
    if kind == "irnn":
        for name in GRU_DIAG:
            p[name] = u(D)
        for name in GRU_BIAS:
            p[name] = np.zeros(D)
        if not mu_static:
            p["w_mu"] = u(D) if mu_diagonal else u(D, D)
            p["b_mu"] = np.zeros(D)
        p["w_gamma"] = u(D) if gamma_diagonal else u(D, D)
        p["b_gamma"] = np.full(D, 0.1)
        p["w_out"] = u(D)
        p["b_out"] = np.array(0.0)
        config = {"mu_diagonal": bool(mu_diagonal), "mu_static": bool(mu_static), "gamma_diagonal": bool(gamma_diagonal)}
    elif kind in ("gru_forward", "gru_simple"):
        H = D
        d_in = D if kind == "gru_forward" else 3 * D
        for g in ("r", "z", "n"):
            p[f"W_i{g}"] = u(H, d_in)
        for g in ("r", "z", "n"):
            p[f"W_h{g}"] = u(H, H)
        for name in GRU_BIAS:
            p[name] = np.zeros(H)
        p["w_out"] = u(H)
        p["b_out"] = np.array(0.0)
    elif kind == "logistic":
        p["w"] = np.zeros(N_SUMMARY * D)
        p["b"] = np.array(0.0)
    else:
        raise UnsupportedModelError(f"unknown model kind {kind!r}")
    return Model(kind, D, p, config, list(feature_names) if feature_names is not None else None)


def parameter_count(model: Model) -> int:
    return int(sum(v.size for v in model.params.values()))


def model_summary(model: Model) -> dict:
    hidden = 0 if model.kind == "logistic" else model.n_features
    return {
        "model_kind": model.kind,
        "D": model.n_features,
        "input_width": model.input_width,
        "hidden_units": hidden,
        "n_params": parameter_count(model),
        "params": {k: list(v.shape) for k, v in model.params.items()},
    }


# ---------------------------------------------------------------------------
# helpers letting the step functions accept plain arrays


def _lifted(fn):
    """Run ``fn`` on a throwaway tape when no argument is a tape node.

    Node results come back as numpy arrays in that case, so the step functions
    double as plain numeric functions.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        def has_node(v):
            if isinstance(v, nd.Node):
                return True
            if isinstance(v, dict):
                return any(isinstance(x, nd.Node) for x in v.values())
            return False

        if any(has_node(a) for a in args) or any(has_node(v) for v in kwargs.values()):
            return fn(*args, **kwargs)
        tape = nd.Tape()

        def lift(v):
            if isinstance(v, dict):
                return {k: tape.constant(x) for k, x in v.items()}
            if isinstance(v, (np.ndarray, list, tuple, float, int)) and not isinstance(v, bool):
                return tape.constant(v)
            return v

        out = fn(*(lift(a) for a in args), **{k: lift(v) for k, v in kwargs.items()})
        return _unwrap(out)

    return wrapper


def _unwrap(out):
    if isinstance(out, nd.Node):
        return out.value
    if isinstance(out, tuple):
        return tuple(_unwrap(o) for o in out)
    return out


def _check_len(name, node, D):
    if node.value.shape != (D,):
        raise DimensionError(f"{name}: expected shape ({D},), got {node.value.shape}")


# ---------------------------------------------------------------------------
# I-RNN cell


@_lifted
def masked_gru_step(p, x_t, h_prev):
    """GRU update with identity-masked (diagonal) weights.

    ``h_prev`` is the previous decayed state.  Component d of the result
    depends only on component d of every input.
    """
    D = p["w_ir"].value.shape[0]
    _check_len("x_t", x_t, D)
    _check_len("h_prev", h_prev, D)
    r = nd.sigmoid(nd.add(nd.diag_affine(p["w_ir"], x_t, p["b_r"]), nd.diag_affine(p["w_hr"], h_prev, _zeros_like(h_prev))))
    z = nd.sigmoid(nd.add(nd.diag_affine(p["w_iz"], x_t, p["b_z"]), nd.diag_affine(p["w_hz"], h_prev, _zeros_like(h_prev))))
    q = nd.hadamard(r, h_prev)
    n = nd.tanh(nd.add(nd.diag_affine(p["w_in"], x_t, p["b_n"]), nd.diag_affine(p["w_hn"], q, _zeros_like(q))))
    return nd.add(nd.hadamard(nd.one_minus(z), h_prev), nd.hadamard(z, n))


def _zeros_like(node):
    return node.tape.constant(np.zeros(node.value.shape))


@_lifted
def decay_step(p, x_t, h_t, delta_t, mu_static=False):
    """Relax ``h_t`` toward a baseline at a rate driven by elapsed time.

    Returns ``(h_hat, mu, gamma)``.  The decayed state is computed as
    ``e*h + (1-e)*mu`` with ``e = exp(-gamma)`` so that ``gamma == 0`` returns
    ``h`` bit for bit.
    """
    D = h_t.value.shape[0]
    _check_len("delta_t", delta_t, D)
    tape = h_t.tape
    if mu_static:
        mu = tape.constant(np.zeros(D))
    else:
        mu = _affine(p["w_mu"], x_t, p["b_mu"])
    gamma = nd.max0(_affine(p["w_gamma"], delta_t, p["b_gamma"]))
    e = nd.exp_neg(gamma)
    h_hat = nd.add(nd.hadamard(e, h_t), nd.hadamard(nd.one_minus(e), mu))
    return h_hat, mu, gamma


def _affine(W, x, b):
    return nd.diag_affine(W, x, b) if W.value.ndim == 1 else nd.dense_affine(W, x, b)


@_lifted
def additive_head(out, h_hat):
    """Per-feature contributions ``w_out * h_hat`` and their sum plus ``b_out``."""
    contributions = nd.hadamard(out["w_out"], h_hat)
    logit = nd.add(nd.total(contributions), out["b_out"])
    return logit, contributions


@dataclass
class IRNNTrace:
    """Per-step I-RNN outputs for the valid part of one sample."""

    logits: np.ndarray  # (T,)
    contributions: np.ndarray  # (T, D)
    h: np.ndarray
    h_hat: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    bias: float

    @property
    def final_logit(self) -> float:
        return float(self.logits[-1])


def _check_sample(sample, width):
    if sample.valid_len < 1:
        raise ContractError("valid_len must be >= 1")
    if sample.values.shape[1] != width:
        raise DimensionError(f"sample has {sample.values.shape[1]} features, model expects {width}")


def irnn_graph(tape, leaves, sample, mu_static=False):
    """Build the unrolled I-RNN on ``tape``.  Returns (logit nodes, internals)."""
    D = leaves["w_ir"].value.shape[0]
    _check_sample(sample, D)
    h_hat = tape.constant(np.zeros(D))
    logits, steps = [], []
    for t in range(sample.valid_len):
        x = tape.constant(sample.values[t])
        delta = tape.constant(sample.elapsed[t])
        h = masked_gru_step(leaves, x, h_hat)
        h_hat, mu, gamma = decay_step(leaves, x, h, delta, mu_static=mu_static)
        logit, contrib = additive_head(leaves, h_hat)
        logits.append(logit)
        steps.append((h, h_hat, mu, gamma, contrib))
    return logits, steps


def irnn_forward(model: Model, sample) -> IRNNTrace:
    """Run I-RNN over the valid steps of one sample (padding is never touched)."""
    if model.kind != "irnn":
        raise UnsupportedModelError(f"irnn_forward needs an irnn model, got {model.kind}")
    tape = nd.Tape()
    leaves = {k: tape.constant(v) for k, v in model.params.items()}
    logits, steps = irnn_graph(tape, leaves, sample, model.mu_static)

    def col(i):
        return np.array([s[i].value for s in steps])

    return IRNNTrace(
        logits=np.array([float(l.value) for l in logits]),
        contributions=col(4),
        h=col(0),
        h_hat=col(1),
        mu=col(2),
        gamma=col(3),
        bias=float(model.params["b_out"]),
    )


# ---------------------------------------------------------------------------
# dense GRU baselines


@_lifted
def dense_gru_step(p, u_t, h_prev):
    zero = _zeros_like(h_prev)
    r = nd.sigmoid(nd.add(nd.dense_affine(p["W_ir"], u_t, p["b_r"]), nd.dense_affine(p["W_hr"], h_prev, zero)))
    z = nd.sigmoid(nd.add(nd.dense_affine(p["W_iz"], u_t, p["b_z"]), nd.dense_affine(p["W_hz"], h_prev, zero)))
    q = nd.hadamard(r, h_prev)
    n = nd.tanh(nd.add(nd.dense_affine(p["W_in"], u_t, p["b_n"]), nd.dense_affine(p["W_hn"], q, zero)))
    return nd.add(nd.hadamard(nd.one_minus(z), h_prev), nd.hadamard(z, n))


def gru_inputs(kind: str, sample) -> np.ndarray:
    """Per-step input rows: ``x`` for GRU-Forward, ``[x; delta; m]`` for GRU-Simple."""
    T = sample.valid_len
    if kind == "gru_forward":
        return np.asarray(sample.values[:T])
    if kind == "gru_simple":
        return np.hstack([sample.values[:T], sample.elapsed[:T], sample.mask[:T]])
    raise UnsupportedModelError(f"{kind} is not a dense GRU model")


def gru_graph(tape, leaves, inputs):
    H = leaves["W_hr"].value.shape[0]
    if leaves["W_ir"].value.shape[1] != inputs.shape[1]:
        raise DimensionError(f"GRU input width {inputs.shape[1]} != {leaves['W_ir'].value.shape[1]}")
    h = tape.constant(np.zeros(H))
    logits, hs = [], []
    for t in range(inputs.shape[0]):
        h = dense_gru_step(leaves, tape.constant(inputs[t]), h)
        logits.append(nd.add(nd.total(nd.hadamard(leaves["w_out"], h)), leaves["b_out"]))
        hs.append(h)
    return logits, hs


def _gru_forward(model, sample, kind):
    if model.kind != kind:
        raise UnsupportedModelError(f"expected a {kind} model, got {model.kind}")
    _check_sample(sample, model.n_features)
    tape = nd.Tape()
    leaves = {k: tape.constant(v) for k, v in model.params.items()}
    logits, _ = gru_graph(tape, leaves, gru_inputs(kind, sample))
    return np.array([float(l.value) for l in logits])


def gru_simple_forward(model: Model, sample) -> np.ndarray:
    """Per-step logits of the GRU fed ``[x; delta; m]``."""
    return _gru_forward(model, sample, "gru_simple")


def gru_forward_forward(model: Model, sample) -> np.ndarray:
    """Per-step logits of the GRU fed the forward-filled values only."""
    return _gru_forward(model, sample, "gru_forward")


def gru_hidden_states(model: Model, sample) -> np.ndarray:
    tape = nd.Tape()
    leaves = {k: tape.constant(v) for k, v in model.params.items()}
    _, hs = gru_graph(tape, leaves, gru_inputs(model.kind, sample))
    return np.array([h.value for h in hs])


# ---------------------------------------------------------------------------
# logistic baseline


def summarize_features(sample) -> np.ndarray:
    """Max, min, mean, first, last and population variance of each feature.

    Only measured values count.  Layout is feature-major: entry ``6*d + k``
    holds statistic ``SUMMARY_NAMES[k]`` of feature ``d``.  Features never
    measured give six zeros.
    """
    if sample.valid_len < 1:
        raise ContractError("valid_len must be >= 1")
    T = sample.valid_len
    D = sample.values.shape[1]
    out = np.zeros(N_SUMMARY * D)
    for d in range(D):
        obs = sample.values[:T, d][sample.mask[:T, d] > 0]
        if obs.size:
            out[N_SUMMARY * d : N_SUMMARY * (d + 1)] = (obs.max(), obs.min(), obs.mean(), obs[0], obs[-1], obs.var())
    return out


def summarize_set(data) -> np.ndarray:
    """:func:`summarize_features` for every sample of a :class:`SequenceSet`, vectorized."""
    N, T, D = data.values.shape
    valid = np.arange(T)[None, :] < data.lengths[:, None]
    m = (data.mask > 0) & valid[:, :, None]
    v = data.values
    count = m.sum(axis=1)
    seen = count > 0
    safe = np.maximum(count, 1)
    vmax = np.where(seen, np.where(m, v, -np.inf).max(axis=1), 0.0)
    vmin = np.where(seen, np.where(m, v, np.inf).min(axis=1), 0.0)
    mean = np.where(m, v, 0.0).sum(axis=1) / safe
    var = np.where(m, (v - mean[:, None, :]) ** 2, 0.0).sum(axis=1) / safe
    first_idx = np.argmax(m, axis=1)
    last_idx = T - 1 - np.argmax(m[:, ::-1, :], axis=1)
    first = np.take_along_axis(v, first_idx[:, None, :], axis=1)[:, 0, :]
    last = np.take_along_axis(v, last_idx[:, None, :], axis=1)[:, 0, :]
    stats = np.stack([vmax, vmin, mean, np.where(seen, first, 0.0), np.where(seen, last, 0.0), np.where(seen, var, 0.0)], axis=2)
    return stats.reshape(N, N_SUMMARY * D)


@_lifted
def logistic_forward(w, b, s):
    """``w . s + b`` as a scalar node."""
    if w.value.shape != s.value.shape:
        raise DimensionError(f"logistic weights {w.value.shape} vs summary {s.value.shape}")
    return nd.add(nd.total(nd.hadamard(w, s)), b)


# ---------------------------------------------------------------------------
# uniform entry points


def tape_final_logit(model: Model, tape, leaves, sample):
    """Final-valid-step logit node for any model kind."""
    if model.kind == "irnn":
        logits, _ = irnn_graph(tape, leaves, sample, model.mu_static)
        return logits[-1]
    if model.kind in ("gru_forward", "gru_simple"):
        _check_sample(sample, model.n_features)
        logits, _ = gru_graph(tape, leaves, gru_inputs(model.kind, sample))
        return logits[-1]
    s = tape.constant(summarize_features(sample))
    return logistic_forward(leaves["w"], leaves["b"], s)


def tape_loss(model: Model, tape, leaves, sample):
    return nd.bce(tape_final_logit(model, tape, leaves, sample), sample.label)


def tape_loss_and_grad(model: Model, sample):
    """Final-step BCE of one sample and its gradient through the tape."""
    tape = nd.Tape()
    leaves = tape.params(model.params)
    loss = tape_loss(model, tape, leaves, sample)
    return float(loss.value), nd.backward(loss)
