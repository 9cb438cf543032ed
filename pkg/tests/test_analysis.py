import math

import numpy as np
import pytest

from ldpvlm.analysis import (BoundQuery, accuracy_upper_bound, accuracy_upper_bound_raw,
                             bound_simulation_oracle, bound_summary, private_grid_search,
                             private_validation, private_validation_from_bits)
from ldpvlm.exceptions import ValidationError
from ldpvlm.rng import RandomnessSource
from oracles import bound_k2

# Bound values for (K, epsilon) from the closed form, frozen.
BOUND_K2_EPS2 = 0.8160602794142788


def test_k2_closed_form():
    assert accuracy_upper_bound(BoundQuery(2, 2.0)) == pytest.approx(BOUND_K2_EPS2, abs=1e-15)
    for eps in (0.1, 1.0, 5.0, 20.0):
        assert accuracy_upper_bound(BoundQuery(2, eps)) == pytest.approx(bound_k2(eps), abs=1e-14)


def test_ten_class_reference_value():
    assert accuracy_upper_bound(BoundQuery(10, 7.0, 8)) == pytest.approx(0.80694, abs=5e-6)


def test_bound_monotone_in_epsilon():
    vals = [accuracy_upper_bound_raw(BoundQuery(6, e)) for e in np.linspace(0.5, 30, 40)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert accuracy_upper_bound(BoundQuery(4, math.inf)) == 1.0


def test_bound_query_validation():
    for args in [(3, 1.0), (1, 1.0), (4, 0.0), (10, 1.0, 4)]:
        with pytest.raises(ValidationError):
            BoundQuery(*args)


def test_summary_floors_at_chance():
    s = bound_summary(BoundQuery(10, 0.2))
    assert s["floored"] == max(s["raw"], 0.1)


def test_simulation_below_bound():
    acc, se = bound_simulation_oracle(4, 4, 3.0, 200_000, RandomnessSource(0), shard_size=50_000)
    assert acc <= accuracy_upper_bound(BoundQuery(4, 3.0)) + 5 * se


def test_simulation_independent_of_shard_size_seed_stream():
    a = bound_simulation_oracle(2, 1, 2.0, 10_000, RandomnessSource(1), shard_size=10_000)
    b = bound_simulation_oracle(2, 1, 2.0, 10_000, RandomnessSource(1), shard_size=10_000)
    assert a == b


def test_private_validation_debiases():
    correct = np.zeros(200_000, dtype=int)
    correct[:140_000] = 1
    rep = private_validation_from_bits(correct, 1.0, RandomnessSource(0))
    assert rep.p == pytest.approx(1 / (math.e + 1))
    assert abs(rep.A_hat - 0.7) < 4 * rep.std_error
    assert not rep.out_of_range
    assert set(rep.as_dict()) >= {"A_hat", "A_tilde", "std_error", "out_of_range"}


def test_private_validation_errors():
    with pytest.raises(ValidationError):
        private_validation_from_bits([], 1.0, 0)
    with pytest.raises(ValidationError):
        private_validation_from_bits([1, 0], 0.0, 0)


class Threshold:
    def __init__(self, t, fail=False):
        self.t, self.fail = t, fail

    def fit(self, X, y):
        if self.fail:
            raise ValueError("boom")
        return self

    def predict(self, X):
        return (X[:, 0] > self.t).astype(int)


def test_private_validation_uses_predict():
    X = np.linspace(-1, 1, 1000)[:, None]
    rep = private_validation(Threshold(0.0), X, (X[:, 0] > 0).astype(int), 8.0, 0)
    assert rep.A_hat == pytest.approx(1.0, abs=0.01)


def test_grid_search_picks_best_and_records_failures():
    X = np.linspace(-1, 1, 4000)[:, None]
    y = (X[:, 0] > 0.2).astype(int)
    cands = [Threshold(-0.8), Threshold(0.2), Threshold(0.0, fail=True), Threshold(0.9)]
    res = private_grid_search(cands, X, y, X, y, 3.0, rng=0)
    assert res.best_index == 1
    assert 2 in res.failures and res.reports[2] is None
    assert res.n_queries == 3 and res.respondent_epsilon_spent == pytest.approx(9.0)


def test_grid_search_all_fail():
    with pytest.raises(RuntimeError):
        private_grid_search([Threshold(0, fail=True)], np.zeros((2, 1)), [0, 1],
                            np.zeros((2, 1)), [0, 1], 1.0)
    with pytest.raises(ValidationError):
        private_grid_search([], None, None, None, None, 1.0)
