import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from jsqa.errors import DataError, UndefinedCorrelationError
from jsqa.metrics import EvalReport, average_ranks, evaluate_model, evaluate_predictions, mae, pcc, rmse, srcc

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_pcc_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert pcc(x, 2 * x + 3) == pytest.approx(1.0)
    assert pcc(x, -x) == pytest.approx(-1.0)
    assert pcc(x, [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_srcc_examples():
    x = np.array([0.1, 0.5, 1.2, 3.0, 7.0])
    assert srcc(x, np.exp(x)) == 1.0
    assert srcc(x, x[::-1]) == -1.0
    # ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): 4.5 / sqrt(4.5 * 5)
    assert srcc([1, 2, 2, 4], [1, 2, 3, 4]) == pytest.approx(4.5 / math.sqrt(22.5), abs=1e-12)
    assert srcc([1, 2, 2, 4], [1, 2, 3, 4]) == pytest.approx(0.9487, abs=1e-4)


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([1, 2, 2, 4]), [1, 2.5, 2.5, 4])
    np.testing.assert_array_equal(average_ranks([3, 3, 3]), [2, 2, 2])


def test_error_metrics_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert rmse(a, a) == mae(a, a) == 0.0
    assert rmse(a + 0.5, a) == pytest.approx(0.5) and mae(a + 0.5, a) == pytest.approx(0.5)
    assert mae([0, 0], [0, 2]) == 1.0
    assert rmse([0, 0], [0, 2]) == pytest.approx(math.sqrt(2))


def test_metric_guards():
    with pytest.raises(UndefinedCorrelationError):
        pcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        srcc([2, 2, 2], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        pcc([1], [2])
    with pytest.raises(DataError):
        rmse([], [])
    with pytest.raises(DataError):
        mae([1, 2], [1])


@settings(max_examples=80, deadline=None)
@given(xs=st.lists(finite, min_size=3, max_size=30), seed=st.integers(0, 2**31))
def test_against_scipy(xs, seed):
    x = np.array(xs)
    y = np.random.default_rng(seed).standard_normal(x.size)
    assume(np.ptp(x) > 1e-6)
    assert pcc(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-9)
    assert srcc(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(xs=st.lists(finite, min_size=2, max_size=30), a=st.floats(-100, 100), b=finite)
def test_pcc_affine(xs, a, b):
    x = np.array(xs)
    assume(np.ptp(x) > 1e-3 and abs(a) > 1e-3)
    assert pcc(x, a * x + b) == pytest.approx(math.copysign(1.0, a), abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(xs=st.lists(st.integers(-50, 50), min_size=3, max_size=30, unique=True), seed=st.integers(0, 2**31))
def test_srcc_monotone_invariance(xs, seed):
    # integer grid keeps exp() strictly increasing after rounding
    x = np.array(xs) / 10.0
    y = np.random.default_rng(seed).standard_normal(x.size)
    assert srcc(np.exp(x), y) == pytest.approx(srcc(x, y), abs=1e-12)
    assert srcc(x, y ** 3) == pytest.approx(srcc(x, y), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(pairs=st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
def test_mae_le_rmse(pairs):
    x, y = np.array(pairs).T
    assert mae(x, y) <= rmse(x, y) * (1 + 1e-12) + 1e-300


def _dataset(n=6):
    return [(f"k{i}", float(i), 1.0 + 0.5 * i) for i in range(n)]


def test_evaluate_perfect_stub():
    lookup = {clip: mos for _, clip, mos in _dataset()}
    r = evaluate_model(lookup.__getitem__, _dataset(), "toy", "none")
    assert (r.pcc, r.srcc, r.rmse, r.mae, r.n) == (1.0, 1.0, 0.0, 0.0, 6)
    assert r.summary_line() == "PCC=1.0000 SRCC=1.0000 RMSE=0.0000 MAE=0.0000 n=6"


def test_evaluate_constant_stub():
    r = evaluate_model(lambda clip: 3.0, _dataset())
    assert r.pcc is None and r.srcc is None
    assert set(r.errors) == {"pcc", "srcc"}
    assert r.rmse > 0 and r.mae > 0
    assert "PCC=undefined" in r.summary_line()


def test_evaluate_order_independent(tmp_path):
    items = [(f"k{i}", float(i), float(v)) for i, v in enumerate([3.1, 2.2, 4.8, 1.5, 3.3])]
    pred = {float(i): 1 + 0.7 * i for i in range(5)}.__getitem__
    a = evaluate_model(pred, items)
    b = evaluate_model(pred, items[::-1])
    assert a == b
    a.write(tmp_path / "r.json")
    assert EvalReport.read(tmp_path / "r.json") == a


def test_evaluate_needs_two_samples():
    with pytest.raises(DataError):
        evaluate_model(lambda c: 1.0, _dataset(1))


def test_evaluate_predictions_direct():
    r = evaluate_predictions([1, 2, 3], [1, 2, 4])
    assert r.mae == pytest.approx(1 / 3) and r.errors == {}
