"""Dense float64 arrays with a reverse-mode tape.

Only the handful of operations the recurrent models need are provided.  Every
value lives on a :class:`Tape` as a :class:`Node`; gradients are accumulated by
walking the tape backwards in node-id order, which keeps results bitwise
reproducible.

Example::

    tape = Tape()
    w = tape.param([2.0], "w")
    f = total(hadamard(w, tape.constant([3.0])))
    backward(f)["w"]        # array([3.])
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Node",
    "Tape",
    "diag_affine",
    "dense_affine",
    "elementwise",
    "sigmoid",
    "tanh",
    "exp_neg",
    "max0",
    "hadamard",
    "add",
    "sub",
    "one_minus",
    "scale",
    "total",
    "bce",
    "backward",
    "gradcheck",
    "numeric_gradient",
    "relative_error",
]

ELEMENTWISE_KINDS = ("sigmoid", "tanh", "exp_neg", "max0", "hadamard", "add", "sub", "one_minus")


class Node:
    """One recorded value on a tape.

    ``inputs`` holds the ids of the operand nodes, always smaller than ``id``.
    ``vjp`` maps the output cotangent to one cotangent per input.
    """

    __slots__ = ("tape", "id", "op", "inputs", "value", "vjp", "name", "is_param")

    def __init__(self, tape, id, op, inputs, value, vjp=None, name=None, is_param=False):
        self.tape = tape
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.name = name
        self.is_param = is_param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Append-only record of a single forward computation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, op, inputs, value, vjp=None, name=None, is_param=False):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by {op!r}")
        node = Node(self, len(self.nodes), op, tuple(n.id for n in inputs), value, vjp, name, is_param)
        self.nodes.append(node)
        return node

    def constant(self, value, name=None) -> Node:
        return self._push("const", (), np.array(value, dtype=np.float64), name=name)

    def param(self, value, name) -> Node:
        return self._push("param", (), np.array(value, dtype=np.float64), name=name, is_param=True)

    def params(self, values: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {k: self.param(v, k) for k, v in values.items()}


def _node(x, tape):
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ContractError("operands belong to different tapes")
        return x
    return tape.constant(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a tape node")


def _same_shape(op, *nodes):
    shape = nodes[0].shape
    for n in nodes[1:]:
        if n.shape != shape:
            raise DimensionError(f"{op}: shape {n.shape} does not match {shape}")


def diag_affine(w, x, b) -> Node:
    """``w * x + b`` for length-D vectors.

    Same result as ``dense_affine(diag(w), x, b)`` with O(D) work.
    """
    tape = _tape_of(w, x, b)
    w, x, b = (_node(v, tape) for v in (w, x, b))
    if w.value.ndim != 1:
        raise DimensionError(f"diag_affine: weights must be a vector, got shape {w.shape}")
    _same_shape("diag_affine", w, x, b)
    wv, xv = w.value, x.value

    def vjp(g):
        return g * xv, g * wv, g

    return tape._push("diag_affine", (w, x, b), wv * xv + b.value, vjp)


def dense_affine(W, x, b) -> Node:
    """``W @ x + b`` for a matrix ``W`` of shape (D_out, D_in)."""
    tape = _tape_of(W, x, b)
    W, x, b = (_node(v, tape) for v in (W, x, b))
    if W.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1:
        raise DimensionError("dense_affine: expected matrix, vector, vector")
    d_out, d_in = W.shape
    if x.shape[0] != d_in or b.shape[0] != d_out:
        raise DimensionError(f"dense_affine: W{W.shape} x{x.shape} b{b.shape}")
    Wv, xv = W.value, x.value

    def vjp(g):
        return np.outer(g, xv), Wv.T @ g, g

    return tape._push("dense_affine", (W, x, b), Wv @ xv + b.value, vjp)


def _unary(kind, a):
    v = a.value
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        out[~pos] = e / (1.0 + e)
        return out, lambda g: (g * out * (1.0 - out),)
    if kind == "tanh":
        out = np.tanh(v)
        return out, lambda g: (g * (1.0 - out * out),)
    if kind == "exp_neg":
        out = np.exp(-v)
        return out, lambda g: (-g * out,)
    if kind == "max0":
        active = v > 0
        return np.where(active, v, 0.0), lambda g: (np.where(active, g, 0.0),)
    if kind == "one_minus":
        return 1.0 - v, lambda g: (-g,)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def _binary(kind, a, b):
    av, bv = a.value, b.value
    if kind == "hadamard":
        return av * bv, lambda g: (g * bv, g * av)
    if kind == "add":
        return av + bv, lambda g: (g, g)
    if kind == "sub":
        return av - bv, lambda g: (g, -g)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def elementwise(kind: str, *operands) -> Node:
    """Apply one of :data:`ELEMENTWISE_KINDS` element by element.

    Binary kinds require equal shapes; nothing is broadcast.
    """
    if kind not in ELEMENTWISE_KINDS:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    tape = _tape_of(*operands)
    nodes = [_node(v, tape) for v in operands]
    binary = kind in ("hadamard", "add", "sub")
    if len(nodes) != (2 if binary else 1):
        raise ContractError(f"{kind} takes {2 if binary else 1} operand(s), got {len(nodes)}")
    if binary:
        _same_shape(kind, *nodes)
        out, vjp = _binary(kind, *nodes)
    else:
        out, vjp = _unary(kind, nodes[0])
    return tape._push(kind, nodes, out, vjp)


def sigmoid(a):
    return elementwise("sigmoid", a)


def tanh(a):
    return elementwise("tanh", a)


def exp_neg(a):
    return elementwise("exp_neg", a)


def max0(a):
    return elementwise("max0", a)


def one_minus(a):
    return elementwise("one_minus", a)


def hadamard(a, b):
    return elementwise("hadamard", a, b)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def scale(c: float, a) -> Node:
    """Scalar-times-tensor, the only broadcast the tape allows."""
    tape = _tape_of(a)
    a = _node(a, tape)
    c = float(c)
    return tape._push("scale", (a,), c * a.value, lambda g: (c * g,))


def total(a) -> Node:
    """Sum of all entries as a 0-d node."""
    tape = _tape_of(a)
    a = _node(a, tape)
    shape = a.shape
    return tape._push("total", (a,), np.sum(a.value), lambda g: (np.full(shape, g),))


def bce(logit, label: float) -> Node:
    """Binary cross-entropy of a scalar logit, in the overflow-free form."""
    tape = _tape_of(logit)
    logit = _node(logit, tape)
    if logit.value.size != 1:
        raise DimensionError(f"bce expects a scalar logit, got shape {logit.shape}")
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    l = logit.value
    loss = np.maximum(l, 0.0) - l * label + np.log1p(np.exp(-np.abs(l)))
    if l >= 0:
        p = 1.0 / (1.0 + np.exp(-l))
    else:
        e = np.exp(l)
        p = e / (1.0 + e)
    return tape._push("bce", (logit,), loss, lambda g: (g * (p - label),))


def backward(output: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar node with respect to every parameter leaf.

    Returns a mapping from parameter name to gradient array.  Parameters the
    output does not depend on get a zero array.
    """
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    tape = output.tape
    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
    for node in reversed(tape.nodes[: output.id + 1]):
        g = grads.pop(node.id, None) if not node.is_param else grads.get(node.id)
        if g is None or node.vjp is None:
            continue
        for input_id, gi in zip(node.inputs, node.vjp(g)):
            if input_id in grads:
                grads[input_id] = grads[input_id] + gi
            else:
                grads[input_id] = gi
    out = {}
    for node in tape.nodes:
        if node.is_param:
            g = grads.get(node.id)
            out[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64).reshape(node.shape)
    return out


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(fn: Callable[[dict], float], params: Mapping[str, np.ndarray], step: float = 1e-4):
    """Central finite differences of ``fn(params)`` for every parameter entry."""
    if step <= 0:
        raise ContractError("step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, value in base.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(base))
            flat[i] = orig - step
            fm = float(fn(base))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            g.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        out[name] = g
    return out


def gradcheck(f: Callable[[Tape, dict[str, Node]], Node], params: Mapping[str, np.ndarray], step: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, leaves)`` must build a scalar node from the parameter leaves.
    """
    if step <= 0:
        raise ContractError("step must be positive")

    def value(p):
        tape = Tape()
        return f(tape, tape.params(p)).value

    tape = Tape()
    out = f(tape, tape.params(params))
    if not np.all(np.isfinite(out.value)):
        raise NumericError("objective is not finite")
    analytic = backward(out)
    numeric = numeric_gradient(value, params, step)
    worst = 0.0
    for name in analytic:
        err = relative_error(analytic[name], numeric[name])
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
