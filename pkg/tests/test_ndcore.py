import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irnn import ndcore as nd
from irnn.errors import ContractError, DimensionError, NumericError


def test_docstring_example():
    tape = nd.Tape()
    w = tape.param([2.0], "w")
    f = nd.total(nd.hadamard(w, tape.constant([3.0])))
    assert nd.backward(f)["w"].tolist() == [3.0]


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp_neg", "one_minus"])
def test_unary_gradients(kind, rng):
    p = {"a": rng.normal(size=4)}
    err = nd.gradcheck(lambda t, l: nd.total(nd.elementwise(kind, l["a"])), p)
    assert err < 1e-7


def test_max0_gradient_away_from_kink(rng):
    a = rng.normal(size=6)
    a[np.abs(a) < 0.05] = 0.5
    assert nd.gradcheck(lambda t, l: nd.total(nd.max0(l["a"])), {"a": a}) < 1e-7


@pytest.mark.parametrize("kind", ["hadamard", "add", "sub"])
def test_binary_gradients(kind, rng):
    p = {"a": rng.normal(size=3), "b": rng.normal(size=3)}
    err = nd.gradcheck(lambda t, l: nd.total(nd.sigmoid(nd.elementwise(kind, l["a"], l["b"]))), p)
    assert err < 1e-7


def test_affine_gradients(rng):
    p = {"w": rng.normal(size=3), "W": rng.normal(size=(2, 3)), "b": rng.normal(size=3), "c": rng.normal(size=2)}

    def f(tape, l):
        x = tape.constant(rng_x)
        y = nd.tanh(nd.diag_affine(l["w"], x, l["b"]))
        return nd.total(nd.sigmoid(nd.dense_affine(l["W"], y, l["c"])))

    rng_x = rng.normal(size=3)
    assert nd.gradcheck(f, p) < 1e-7


def test_diag_affine_value():
    tape = nd.Tape()
    out = nd.diag_affine(tape.constant([1.0, 2.0]), tape.constant([3.0, -1.0]), tape.constant([0.5, 0.5]))
    assert out.value.tolist() == [3.5, -1.5]


def test_scale_and_shared_use(rng):
    # a node feeding several consumers accumulates gradient from each
    p = {"a": rng.normal(size=2)}
    err = nd.gradcheck(lambda t, l: nd.total(nd.hadamard(nd.scale(3.0, l["a"]), nd.tanh(l["a"]))), p)
    assert err < 1e-7


@pytest.mark.parametrize("logit,label", [(0.0, 1), (3.0, 0), (-40.0, 1), (800.0, 0), (-800.0, 0)])
def test_bce_matches_direct_formula(logit, label):
    tape = nd.Tape()
    v = float(nd.bce(tape.constant(logit), label).value)
    expected = np.logaddexp(0.0, logit) - label * logit
    assert np.isfinite(v)
    assert abs(v - expected) <= 1e-12 * max(1.0, abs(expected))


def test_bce_gradient_is_p_minus_y():
    tape = nd.Tape()
    l = tape.param(np.array(0.3), "l")
    g = nd.backward(nd.bce(l, 1))["l"]
    assert abs(float(g) - (1.0 / (1.0 + np.exp(-0.3)) - 1.0)) < 1e-15


def test_bce_rejects_bad_label():
    tape = nd.Tape()
    with pytest.raises(ContractError):
        nd.bce(tape.constant(0.0), 0.5)


def test_shape_mismatch():
    tape = nd.Tape()
    with pytest.raises(DimensionError):
        nd.add(tape.constant([1.0, 2.0]), tape.constant([1.0, 2.0, 3.0]))
    with pytest.raises(DimensionError):
        nd.dense_affine(tape.constant(np.ones((2, 3))), tape.constant(np.ones(2)), tape.constant(np.ones(2)))


def test_non_finite_rejected():
    tape = nd.Tape()
    with pytest.raises(NumericError):
        tape.constant([np.nan])


def test_backward_needs_scalar():
    tape = nd.Tape()
    a = tape.param([1.0, 2.0], "a")
    with pytest.raises(ContractError):
        nd.backward(nd.tanh(a))


def test_unused_param_gets_zero_gradient():
    tape = nd.Tape()
    a = tape.param([1.0], "a")
    tape.param([5.0, 6.0], "unused")
    g = nd.backward(nd.total(nd.tanh(a)))
    assert g["unused"].tolist() == [0.0, 0.0]


def test_mixing_tapes_is_an_error():
    a = nd.Tape().constant([1.0])
    b = nd.Tape().constant([1.0])
    with pytest.raises(ContractError):
        nd.add(a, b)


def test_relative_error_floor():
    assert nd.relative_error(0.0, 0.0) == 0.0
    assert nd.relative_error(1.0, 3.0) == pytest.approx(0.5)
    assert nd.relative_error(1e-12, 0.0) == pytest.approx(1e-4)


def test_numeric_gradient_quadratic():
    g = nd.numeric_gradient(lambda p: float((p["x"] ** 2).sum()), {"x": np.array([1.0, -2.0])})
    np.testing.assert_allclose(g["x"], [2.0, -4.0], rtol=1e-9)


def test_backward_is_deterministic(rng):
    v = rng.normal(size=5)

    def run():
        tape = nd.Tape()
        a = tape.param(v, "a")
        return nd.backward(nd.total(nd.hadamard(nd.sigmoid(a), nd.tanh(a))))["a"]

    assert np.array_equal(run(), run())


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_sigmoid_derivative_property(x):
    tape = nd.Tape()
    a = tape.param(np.array([x]), "a")
    g = nd.backward(nd.total(nd.sigmoid(a)))["a"][0]
    s = 1.0 / (1.0 + np.exp(-x))
    assert g == pytest.approx(s * (1.0 - s), rel=1e-12, abs=1e-300)
