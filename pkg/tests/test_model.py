import numpy as np
import pytest

from irnn import ndcore as nd
from irnn.errors import DimensionError, UnsupportedModelError
from irnn.model import (
    MODEL_KINDS,
    Model,
    additive_head,
    decay_step,
    gru_forward_forward,
    gru_simple_forward,
    init_model,
    irnn_forward,
    masked_gru_step,
    model_summary,
    parameter_count,
    summarize_features,
    summarize_set,
    tape_final_logit,
    tape_loss,
)

from conftest import make_sample, make_set
from oracles import gru_reference, irnn_reference


def perturbed(model, rng, scale=0.5):
    m = model.copy()
    m.params = {k: np.asarray(v + scale * rng.normal(size=v.shape)) for k, v in m.params.items()}
    return m


def test_init_ranges(rng):
    m = init_model("irnn", 4, rng)
    a = 1 / np.sqrt(4)
    for k in ("w_ir", "w_hz", "w_mu", "w_gamma", "w_out"):
        assert np.all(np.abs(m.params[k]) <= a)
    assert m.params["b_gamma"].tolist() == [0.1] * 4
    assert m.params["b_r"].tolist() == [0.0] * 4
    assert float(m.params["b_out"]) == 0.0


def test_init_options(rng):
    m = init_model("irnn", 3, rng, mu_diagonal=False, gamma_diagonal=False)
    assert m.params["w_mu"].shape == (3, 3) and m.params["w_gamma"].shape == (3, 3)
    s = init_model("irnn", 3, rng, mu_static=True)
    assert "w_mu" not in s.params and s.mu_static


def test_parameter_counts(rng):
    D = 5
    assert parameter_count(init_model("irnn", D, rng)) == 14 * D + 1
    assert parameter_count(init_model("gru_simple", D, rng)) == 3 * D * 3 * D + 3 * D * D + 3 * D + D + 1
    assert parameter_count(init_model("logistic", D, rng)) == 6 * D + 1
    assert model_summary(init_model("gru_forward", D, rng))["model_kind"] == "gru_forward"


def test_unknown_kind():
    with pytest.raises(UnsupportedModelError):
        init_model("lstm", 3)


@pytest.mark.parametrize("mu_static", [False, True])
def test_irnn_matches_reference(rng, mu_static):
    for _ in range(20):
        D, T = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        m = perturbed(init_model("irnn", D, rng, mu_static=mu_static), rng)
        s = make_sample(rng, D, T)
        tr = irnn_forward(m, s)
        logits, contribs, hs, hhs = irnn_reference(m.params, s.values, s.elapsed, T, mu_static)
        np.testing.assert_allclose(tr.logits, logits, rtol=0, atol=1e-12)
        np.testing.assert_allclose(tr.contributions, contribs, rtol=0, atol=1e-12)
        np.testing.assert_allclose(tr.h, hs, rtol=0, atol=1e-12)
        np.testing.assert_allclose(tr.h_hat, hhs, rtol=0, atol=1e-12)


def test_irnn_dense_decay_matches_reference(rng):
    m = perturbed(init_model("irnn", 3, rng, mu_diagonal=False, gamma_diagonal=False), rng)
    s = make_sample(rng, 3, 5)
    tr = irnn_forward(m, s)
    np.testing.assert_allclose(tr.logits, irnn_reference(m.params, s.values, s.elapsed, 5)[0], atol=1e-12)


def test_zero_gamma_returns_h_exactly(rng):
    p = {"w_mu": rng.normal(size=3), "b_mu": rng.normal(size=3), "w_gamma": np.zeros(3), "b_gamma": np.zeros(3)}
    h = rng.normal(size=3)
    h_hat, mu, gamma = decay_step(p, rng.normal(size=3), h, rng.uniform(size=3))
    assert np.array_equal(h_hat, h)
    assert np.array_equal(gamma, np.zeros(3))


def test_large_gamma_reaches_baseline(rng):
    p = {"w_mu": np.ones(2), "b_mu": np.zeros(2), "w_gamma": np.zeros(2), "b_gamma": np.full(2, 50.0)}
    x = np.array([0.3, -0.7])
    h_hat, mu, _ = decay_step(p, x, np.array([5.0, 5.0]), np.ones(2))
    np.testing.assert_allclose(h_hat, x, atol=1e-18 + 5 * np.exp(-50))


def test_masked_step_is_componentwise(rng):
    m = perturbed(init_model("irnn", 4, rng), rng)
    x, h = rng.normal(size=4), rng.normal(size=4)
    base = masked_gru_step(m.params, x, h)
    x2 = x.copy()
    x2[1] += 1.0
    moved = masked_gru_step(m.params, x2, h)
    changed = base != moved
    assert changed.tolist() == [False, True, False, False]


def test_additive_head():
    logit, c = additive_head({"w_out": np.array([1.0, -2.0]), "b_out": np.array(0.5)}, np.array([3.0, 1.0]))
    assert c.tolist() == [3.0, -2.0]
    assert logit == 1.5


def test_additivity_and_isolation(rng):
    for _ in range(100):
        D, T = int(rng.integers(2, 4)), int(rng.integers(1, 6))
        m = perturbed(init_model("irnn", D, rng), rng)
        s = make_sample(rng, D, T)
        tr = irnn_forward(m, s)
        assert np.max(np.abs(tr.logits - tr.bias - tr.contributions.sum(axis=1))) < 1e-12
        d = int(rng.integers(D))
        s2 = make_sample(rng, D, T)
        s2.values[:] = s.values
        s2.elapsed[:] = s.elapsed
        s2.values[:, d] += rng.normal(size=T)
        s2.elapsed[:, d] = rng.uniform(size=T)
        tr2 = irnn_forward(m, s2)
        others = [k for k in range(D) if k != d]
        assert np.array_equal(tr.h_hat[:, others], tr2.h_hat[:, others])


def test_dense_mu_breaks_isolation(rng):
    m = perturbed(init_model("irnn", 3, rng, mu_diagonal=False), rng)
    s = make_sample(rng, 3, 4)
    s2 = make_sample(rng, 3, 4)
    s2.values[:], s2.elapsed[:] = s.values, s.elapsed
    s2.values[:, 0] += 1.0
    assert not np.array_equal(irnn_forward(m, s).h_hat[:, 1], irnn_forward(m, s2).h_hat[:, 1])


def test_padding_is_ignored(rng):
    m = perturbed(init_model("irnn", 2, rng), rng)
    s = make_sample(rng, 2, 8, valid_len=3)
    a = irnn_forward(m, s).logits
    s.values[3:] = 99.0
    assert np.array_equal(a, irnn_forward(m, s).logits)
    assert a.shape == (3,)


@pytest.mark.parametrize("kind", ["gru_forward", "gru_simple"])
def test_dense_gru_matches_reference(kind, rng):
    fwd = gru_forward_forward if kind == "gru_forward" else gru_simple_forward
    for _ in range(10):
        D, T = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        m = perturbed(init_model(kind, D, rng), rng)
        s = make_sample(rng, D, T)
        u = s.values[:T] if kind == "gru_forward" else np.hstack([s.values[:T], s.elapsed[:T], s.mask[:T]])
        np.testing.assert_allclose(fwd(m, s), gru_reference(m.params, u), atol=1e-12)


def test_wrong_width(rng):
    m = init_model("irnn", 3, rng)
    with pytest.raises(DimensionError):
        irnn_forward(m, make_sample(rng, 2, 3))
    with pytest.raises(UnsupportedModelError):
        irnn_forward(init_model("logistic", 3, rng), make_sample(rng, 3, 3))


def test_summaries_oracle(rng):
    s = make_sample(rng, 2, 6, valid_len=5)
    s.mask[:] = 0
    s.mask[[0, 2, 4], 0] = 1
    out = summarize_features(s)
    obs = s.values[[0, 2, 4], 0]
    np.testing.assert_allclose(out[:6], [obs.max(), obs.min(), obs.mean(), obs[0], obs[-1], obs.var()])
    assert out[6:].tolist() == [0.0] * 6  # feature 1 never measured


def test_summaries_ignore_padding_mask(rng):
    s = make_sample(rng, 1, 4, valid_len=2)
    s.mask[:] = 1  # mask set on padding rows must not count
    s.values[2:] = 50.0
    assert summarize_features(s)[0] < 50.0


def test_summarize_set_matches_per_sample(rng):
    data = make_set(rng, 25, 3, 7)
    batched = summarize_set(data)
    for i in range(len(data)):
        np.testing.assert_allclose(batched[i], summarize_features(data.sample(i)), atol=1e-12)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_gradcheck_every_kind(kind, rng):
    for _ in range(3):
        m = perturbed(init_model(kind, 3, rng), rng, 0.3)
        s = make_sample(rng, 3, 5)
        err = nd.gradcheck(lambda tape, leaves: tape_loss(m, tape, leaves, s), m.params)
        assert err < 1e-5


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_json_round_trip_is_exact(kind, rng, tmp_path):
    m = perturbed(init_model(kind, 3, rng, feature_names=["a", "b", "c"]), rng)
    m.save(tmp_path / "w.json")
    back = Model.load(tmp_path / "w.json")
    assert back.kind == kind and back.feature_names == ["a", "b", "c"]
    for k, v in m.params.items():
        assert np.array_equal(back.params[k], v) and back.params[k].shape == v.shape
    s = make_sample(rng, 3, 4)
    tape = nd.Tape()
    a = tape_final_logit(m, tape, {k: tape.constant(v) for k, v in m.params.items()}, s).value
    b = tape_final_logit(back, tape, {k: tape.constant(v) for k, v in back.params.items()}, s).value
    assert a == b
