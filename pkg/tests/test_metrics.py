import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arensemble.exceptions import MapeGuardError
from arensemble.metrics import (
    REPORT_FIELDS,
    cvar,
    cvar_oracle,
    evaluate,
    mae,
    mape,
    rmse,
)
from oracles import cvar_by_grid

ALPHAS = (0.05, 0.15, 0.33, 1.0)


def test_perfect_forecast():
    y = [1.0, 2.0, 3.0]
    assert mae(y, y) == rmse(y, y) == mape(y, y) == 0.0


def test_hand_example():
    assert mae([1, 1], [2, 0]) == 1.0
    assert rmse([1, 1], [2, 0]) == 1.0
    assert mape([1, 1], [2, 0]) == 100.0


def test_mape_guard_reports_indices():
    with pytest.raises(MapeGuardError) as err:
        mape([0.0, 1.0, 0.0], [1.0, 1.0, 1.0])
    assert err.value.indices == [0, 2]


def test_length_mismatch():
    with pytest.raises(ValueError):
        mae([1, 2], [1])


def test_cvar_two_errors():
    assert cvar([0, 0], [1, 3], 0.5) == 3.0


def test_cvar_oracle_examples():
    assert cvar_oracle([0.0], [2.0], 0.7) == 2.0
    assert cvar_oracle([0, 0, 0], [0, 0, 5], 1 / 3) == pytest.approx(5.0, abs=1e-12)


def test_cvar_alpha_range():
    for a in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            cvar([1.0], [1.0], a)


def test_cvar_matches_dense_grid():
    rng = np.random.default_rng(0)
    e = rng.exponential(size=37)
    for a in ALPHAS:
        assert cvar(np.zeros_like(e), e, a) == pytest.approx(cvar_by_grid(e, a), abs=1e-3)


errors = arrays(float, st.integers(1, 50), elements=st.floats(-100, 100))


@given(errors, st.sampled_from(ALPHAS))
def test_cvar_closed_form_equals_oracle(e, alpha):
    y = np.zeros_like(e)
    assert abs(cvar(y, e, alpha) - cvar_oracle(y, e, alpha)) <= 1e-9 * max(1.0, np.abs(e).max())


@given(errors)
def test_cvar_full_tail_is_mae(e):
    y = np.zeros_like(e)
    assert cvar(y, e, 1.0) == mae(y, e)


@given(errors, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_cvar_monotone_in_alpha(e, a1, a2):
    lo, hi = sorted((a1, a2))
    y = np.zeros_like(e)
    assert cvar(y, e, lo) >= cvar(y, e, hi) - 1e-9 * max(1.0, np.abs(e).max())


@given(st.floats(-10, 10), st.integers(1, 20), st.sampled_from(ALPHAS))
def test_cvar_constant_errors(c, n, alpha):
    assert cvar(np.zeros(n), np.full(n, c), alpha) == pytest.approx(abs(c), rel=1e-12, abs=1e-12)


@given(arrays(float, 12, elements=st.floats(0.5, 10)), arrays(float, 12, elements=st.floats(-10, 10)),
       st.permutations(list(range(12))))
def test_permutation_invariance(y, y_hat, perm):
    a = evaluate(y, y_hat).to_dict()
    b = evaluate(y[perm], y_hat[perm]).to_dict()
    for k in REPORT_FIELDS:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-12)


@given(arrays(float, 30, elements=st.floats(0.5, 10)), arrays(float, 30, elements=st.floats(-10, 10)))
def test_report_invariants(y, y_hat):
    r = evaluate(y, y_hat)
    tol = 1e-9 * max(1.0, r.rmse)
    assert r.rmse >= r.mae - tol and r.mae >= 0
    assert r.cvar05 >= r.cvar15 - tol and r.cvar15 >= r.mae - tol
    assert np.isfinite(list(r.to_dict().values())).all()


def test_report_serialization_order():
    r = evaluate([1.0, 2.0], [1.5, 2.0])
    assert list(json.loads(r.to_json())) == list(REPORT_FIELDS)
    assert len(r.csv_row()) == len(REPORT_FIELDS)


def test_evaluate_nan_mape_on_guard():
    r = evaluate([0.0, 1.0], [1.0, 1.0])
    assert np.isnan(r.mape_percent)
    assert r.mae == 0.5
