import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irnn import metrics
from irnn.errors import ContractError, UndefinedMetricError

from oracles import brute_auc, brute_breakeven


def test_auc_examples():
    assert metrics.auc([0.1, 0.9], [0, 1]) == 1.0
    assert metrics.auc([0.9, 0.1], [0, 1]) == 0.0
    assert metrics.auc([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5
    assert metrics.auc([1, 2, 3, 4], [0, 1, 0, 1]) == 0.75


def test_auc_against_brute_force(rng):
    for _ in range(30):
        n = int(rng.integers(2, 60))
        s = rng.integers(0, 6, size=n).astype(float)  # plenty of ties
        y = rng.integers(0, 2, size=n)
        if len(set(y)) < 2:
            continue
        assert metrics.auc_pairwise(s, y) == pytest.approx(brute_auc(s, y), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=80))
def test_rank_sum_equals_pairwise(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs])
    if len(set(y)) < 2:
        return
    assert abs(metrics.auc_ranksum(s, y) - metrics.auc_pairwise(s, y)) < 1e-12


def test_large_inputs_use_rank_sum(rng):
    s, y = rng.normal(size=12000), rng.integers(0, 2, size=12000)
    assert metrics.auc(s, y) == metrics.auc_ranksum(s, y)
    assert abs(metrics.auc_pairwise(s, y) - metrics.auc_ranksum(s, y)) < 1e-12


def test_auc_invariant_to_monotone_transform(rng):
    s, y = rng.normal(size=200), rng.integers(0, 2, size=200)
    assert metrics.auc(s, y) == metrics.auc(np.exp(s) * 3 + 1, y)


def test_auc_errors():
    with pytest.raises(UndefinedMetricError):
        metrics.auc([0.1, 0.2], [1, 1])
    with pytest.raises(ContractError):
        metrics.auc([0.1, 0.2], [0, 2])
    with pytest.raises(ContractError):
        metrics.auc([0.1], [0, 1])


def test_thresholds():
    t = metrics.candidate_thresholds([3.0, 1.0, 1.0, 2.0])
    assert t.tolist() == [-np.inf, 1.5, 2.5, np.inf]


def test_breakeven_against_brute_force(rng):
    for _ in range(40):
        n = int(rng.integers(4, 50))
        s = np.round(rng.normal(size=n), 1)
        y = rng.integers(0, 2, size=n)
        if len(set(y)) < 2:
            continue
        got = metrics.breakeven(s, y)
        want = brute_breakeven(s, y)
        assert got[0] == want[0]
        assert got[1] == pytest.approx(want[1]) and got[2] == pytest.approx(want[2])


def test_breakeven_perfect_separation():
    thr, ppv, spec = metrics.breakeven([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert (thr, ppv, spec) == (0.5, 1.0, 1.0)


def test_report_round_trip():
    r = metrics.evaluate_scores([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert r.auc == 0.75 and r.n_pos == 2 and r.n_neg == 2
    assert metrics.EvalReport.from_json(r.to_json()) == r
    assert '"schema_version": 1' in r.to_json()


def test_cross_correlation_matches_corrcoef(rng):
    X = [rng.normal(size=(int(rng.integers(1, 6)), 3)) for _ in range(10)]
    H = [x @ rng.normal(size=(3, 4)) + 0.1 * rng.normal(size=(x.shape[0], 4)) for x in X]
    corr, deg = metrics.cross_correlation(H, X)
    Xs, Hs = np.vstack(X), np.vstack(H)
    full = np.corrcoef(np.hstack([Xs, Hs]).T)
    np.testing.assert_allclose(corr, full[:3, 3:], atol=1e-12)
    assert not deg.any()


def test_cross_correlation_flat_columns():
    X = [np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])]
    H = [np.array([[1.0], [2.0], [4.0]])]
    corr, deg = metrics.cross_correlation(H, X)
    assert deg[:, 0].tolist() == [False, True]
    assert corr[1, 0] == 0.0 and corr[0, 0] > 0.9


def test_cross_correlation_shape_mismatch():
    with pytest.raises(ContractError):
        metrics.cross_correlation([np.ones((3, 2))], [np.ones((2, 2))])


def test_mean_std_format():
    assert metrics.mean_std([0.859, 0.862, 0.865]) == "0.862 (0.003)"
    assert metrics.mean_std([0.5]) == "0.500 (0.000)"
