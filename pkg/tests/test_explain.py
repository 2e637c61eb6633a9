import json

import numpy as np
import pytest
from statsmodels.nonparametric.smoothers_lowess import lowess as sm_lowess

from irnn import explain, kernels
from irnn.datapipe import FeatureStats, NormStats, SequenceSet, denormalize
from irnn.errors import ContractError, DataError, UnsupportedModelError
from irnn.model import init_model

from conftest import make_sample, make_set


def trained_like(rng, D=3, **opts):
    m = init_model("irnn", D, rng, **opts)
    m.params = {k: np.asarray(v + 0.5 * rng.normal(size=v.shape)) for k, v in m.params.items()}
    return m


def test_local_trace_additive_and_matches_internals(rng):
    m = trained_like(rng)
    data = make_set(rng, 6, 3, 7)
    internals = kernels.irnn_internals(m, data)
    for i in range(len(data)):
        tr = explain.local_trace(m, data.sample(i))
        L = data.lengths[i]
        assert tr.additivity_error() < 1e-12
        np.testing.assert_allclose(tr.contributions, internals["contributions"][i, :L], atol=1e-13)
        assert tr.times.shape == (L,)


def test_zero_model_trace(rng):
    m = init_model("irnn", 2, rng)
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    m.params["b_out"] = np.array(-1.25)
    tr = explain.local_trace(m, make_sample(rng, 2, 4))
    assert np.all(tr.contributions == 0) and np.all(tr.logits == -1.25)


def test_step_change_moves_only_that_feature(rng):
    m = trained_like(rng, 2)
    T, k = 8, 4
    s = make_sample(rng, 2, T)
    s.values[:] = 0.2
    s.elapsed[:] = 0.1
    base = explain.local_trace(m, s)
    s.values[k:, 0] = 2.0
    moved = explain.local_trace(m, s)
    assert np.array_equal(base.contributions[:k], moved.contributions[:k])
    assert np.all(base.contributions[k:, 0] != moved.contributions[k:, 0])
    assert np.array_equal(base.contributions[:, 1], moved.contributions[:, 1])


def test_trace_csv_round_trip(rng, tmp_path):
    m = trained_like(rng, 2)
    tr = explain.local_trace(m, make_sample(rng, 2, 5, sample_id="abc"))
    tr.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "time,logit,c_x0,c_x1"
    back = explain.ContributionTrace.from_csv(tmp_path / "t.csv", "abc", tr.bias)
    assert np.array_equal(back.contributions, tr.contributions) and np.array_equal(back.logits, tr.logits)
    assert back.additivity_error() < 1e-12


def test_local_trace_needs_irnn(rng):
    with pytest.raises(UnsupportedModelError):
        explain.local_trace(init_model("gru_simple", 2, rng), make_sample(rng, 2, 3))


def test_time_average_examples(rng):
    assert explain.time_average(np.full((5, 1), 0.3))[0] == pytest.approx(0.3)
    assert explain.time_average(np.array([[1.0], [-1.0]]))[0] == 0.0
    c = rng.normal(size=(7, 3))
    np.testing.assert_allclose(explain.time_average(c), [c[:, d].sum() / 7 for d in range(3)], atol=1e-15)
    with pytest.raises(ContractError):
        explain.time_average(np.zeros((0, 2)))


def test_global_importance_single_sample(rng):
    m = trained_like(rng)
    data = make_set(rng, 1, 3, 5)
    u = explain.time_average(explain.local_trace(m, data.sample(0)))
    gi = explain.global_importance(m, data)
    assert gi.names == [f"x{d}" for d in np.argsort(-np.abs(u), kind="stable")]
    np.testing.assert_allclose([gi.value(f"x{d}") for d in range(3)], np.abs(u), atol=1e-14)


def test_global_importance_invariances(rng):
    m = trained_like(rng)
    data = make_set(rng, 20, 3, 6)
    gi = explain.global_importance(m, data)
    perm = rng.permutation(20)
    a = dict(gi.ranking)
    b = dict(explain.global_importance(m, data.subset(perm)).ranking)
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-13)
    padded = SequenceSet(
        np.concatenate([data.values, np.zeros((20, 5, 3))], 1),
        np.concatenate([data.elapsed, np.zeros((20, 5, 3))], 1),
        np.concatenate([data.mask, np.zeros((20, 5, 3))], 1),
        data.lengths, data.labels, data.ids, np.concatenate([data.times, np.zeros((20, 5))], 1), data.feature_names,
    )
    assert dict(explain.global_importance(m, padded).ranking) == a
    assert all(v >= 0 for _, v in gi.ranking)
    vals = [v for _, v in gi.ranking]
    assert vals == sorted(vals, reverse=True)


def test_unused_feature_ranks_last(rng):
    m = trained_like(rng)
    m.params["w_out"][1] = 0.0
    data = make_set(rng, 10, 3, 5)
    data.values[:, :, 1] = 0.0
    data.mask[:, :, 1] = 0.0
    gi = explain.global_importance(m, data)
    assert gi.names[-1] == "x1" and gi.value("x1") == 0.0


def test_global_importance_empty(rng):
    data = make_set(rng, 3, 2, 3).subset([])
    with pytest.raises(ContractError):
        explain.global_importance(trained_like(rng, 2), data)


def test_equal_frequency_bins():
    x = np.arange(100.0)
    b = explain.equal_frequency_bins(x, 4)
    assert np.bincount(b).tolist() == [25, 25, 25, 25]
    assert np.all(np.diff(b) >= 0)
    few = explain.equal_frequency_bins(np.array([1.0, 1.0, 2.0, 2.0, 3.0]), 10)
    assert few.max() + 1 == 3
    assert explain.equal_frequency_bins(x, 1).max() == 0


def test_bins_do_not_depend_on_order(rng):
    x = rng.integers(0, 7, size=300).astype(float)
    p = rng.permutation(300)
    assert np.array_equal(explain.equal_frequency_bins(x, 5)[p], explain.equal_frequency_bins(x[p], 5))


def _stats(D):
    return NormStats(tuple(FeatureStats(f"x{d}", 10.0 * (d + 1), 2.0, n_obs=5) for d in range(D)))


def test_risk_curve_structure(rng):
    m = trained_like(rng)
    data = make_set(rng, 200, 3, 6)
    c = explain.risk_curve(m, data, "x0", 8, _stats(3))
    assert c.counts.sum() == c.n_points and len(c.centers) == 8
    assert np.all(np.diff(c.centers) > 0)
    np.testing.assert_allclose(c.centers_raw, denormalize(c.centers, _stats(3)["x0"]))
    shuffled = explain.risk_curve(m, data.subset(rng.permutation(200)), 0, 8)
    np.testing.assert_allclose(shuffled.mean_contribution, c.mean_contribution, rtol=1e-12)
    doc = json.loads(c.to_json())
    assert doc["schema_version"] == 1 and len(doc["bins"]) == 8 and doc["center_raw"] is not None


def test_risk_curve_one_bin_is_mean_u(rng):
    m = trained_like(rng)
    data = make_set(rng, 30, 3, 5)
    c = explain.risk_curve(m, data, 2, 1)
    x, u = explain.risk_points(m, data, 2)
    assert c.counts.tolist() == [x.size]
    assert c.mean_contribution[0] == pytest.approx(u.mean(), rel=1e-12)


def test_risk_curve_flat_when_weight_zero(rng):
    m = trained_like(rng)
    m.params["w_out"][0] = 0.0
    c = explain.risk_curve(m, make_set(rng, 50, 3, 5), 0, 5)
    assert np.all(c.mean_contribution == 0.0)


def test_risk_curve_unobserved_feature(rng):
    data = make_set(rng, 10, 2, 4)
    data.mask[:, :, 1] = 0
    with pytest.raises(DataError):
        explain.risk_curve(trained_like(rng, 2), data, 1)


def test_risk_points_last_value(rng):
    m = trained_like(rng, 2)
    data = make_set(rng, 15, 2, 5, min_len=2)
    data.mask[3, :, 0] = 0.0  # sample 3 never measures x0
    x, u = explain.risk_points(m, data, 0)
    keep = [i for i in range(15) if data.mask[i, : data.lengths[i], 0].any()]
    assert x.size == len(keep)
    assert x.tolist() == [data.values[i, data.lengths[i] - 1, 0] for i in keep]
    xt, ct = explain.risk_points(m, data, 0, per_timestep=True)
    assert xt.size > x.size


def test_risk_curve_smoothing_matches_statsmodels(rng):
    m = trained_like(rng)
    data = make_set(rng, 300, 3, 5)
    c = explain.risk_curve(m, data, 0, 10, smooth=True)
    x, u = explain.risk_points(m, data, 0)
    ref = sm_lowess(u, x, frac=0.3, it=0, xvals=c.centers)
    np.testing.assert_allclose(c.smoothed, ref, atol=1e-10)


def test_lowess_reproduces_lines():
    x = np.linspace(0, 1, 50)
    np.testing.assert_allclose(explain.lowess(x, 2 * x - 1, [0.1, 0.5, 0.9]), [-0.8, 0.0, 0.8], atol=1e-12)


def test_decay_curve_examples(rng):
    m = trained_like(rng, 2)
    m.params["w_gamma"][:] = [0.0, 1.0]
    m.params["b_gamma"][:] = [0.0, 0.0]
    assert np.all(explain.decay_curve(m, 0).gamma == 0.0)
    assert explain.decay_curve(m, 1, [0.5]).gamma.tolist() == [0.5]
    m.params["w_gamma"][0], m.params["b_gamma"][0] = -2.0, 1.0
    c = explain.decay_curve(m, 0, np.linspace(0, 1, 11), _stats(2))
    assert np.all(c.gamma[c.delta >= 0.5] == 0.0)
    assert c.gamma[0] == 1.0
    np.testing.assert_allclose(c.hours, c.delta * _stats(2)["x0"].max_elapsed)
    assert json.loads(c.to_json())["feature"] == "x0"


def test_decay_curve_convex_nonnegative(rng):
    m = trained_like(rng, 4)
    for d in range(4):
        g = explain.decay_curve(m, d, np.linspace(0, 1, 201)).gamma
        assert np.all(g >= 0)
        assert np.all(np.diff(g, 2) >= -1e-12)


def test_decay_curve_dense_gamma(rng):
    with pytest.raises(UnsupportedModelError):
        explain.decay_curve(trained_like(rng, 2, gamma_diagonal=False), 0)


def test_importance_json(rng, tmp_path):
    gi = explain.global_importance(trained_like(rng), make_set(rng, 5, 3, 4))
    path = explain.write_json(gi, tmp_path / "g.json")
    doc = json.loads(path.read_text())
    assert [e["feature"] for e in doc["importance"]] == gi.names
