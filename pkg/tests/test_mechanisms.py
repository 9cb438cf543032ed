import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldpvlm.exceptions import ValidationError
from ldpvlm.mechanisms import (FlipMechanismSpec, LaplaceMechanismSpec, PerFeaturePrivatizer,
                               PiecewiseMechanismSpec, debias_accuracy, flip_label, flip_labels,
                               flip_transition_matrix, laplace_mechanism, per_feature_privatize,
                               piecewise_density, piecewise_mechanism, randomized_response_bit,
                               rr_flip_prob)
from ldpvlm.rng import RandomnessSource
from ldpvlm.schema import ColumnSpec, TableSchema, continuous_schema
from oracles import flip_probability_table

eps_st = st.floats(0.05, 8.0)


def test_laplace_scale_and_moments():
    spec = LaplaceMechanismSpec(2.0, 0.5)
    assert spec.scale == 4.0
    out = laplace_mechanism(np.full(200_000, 3.0), spec, RandomnessSource(0))
    assert abs(out.mean() - 3.0) < 0.05
    assert abs(out.var() - 2 * 16.0) < 0.6


def test_laplace_rejects_nonfinite_input():
    with pytest.raises(ValidationError):
        laplace_mechanism(np.array([np.nan]), LaplaceMechanismSpec(1, 1), RandomnessSource(0))


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan])
def test_laplace_spec_rejects_bad_epsilon(bad):
    with pytest.raises(ValidationError):
        LaplaceMechanismSpec(1.0, bad)


def test_flip_prob_formula():
    assert FlipMechanismSpec(10, 1.0).flip_prob == pytest.approx(9 / (math.e + 9), rel=1e-15)
    assert FlipMechanismSpec(10, math.inf).flip_prob == 0.0
    assert not FlipMechanismSpec(2, 0.0).is_informative


@given(st.integers(2, 12), eps_st)
def test_transition_matrix_matches_definition(K, eps):
    T = flip_transition_matrix(FlipMechanismSpec(K, eps))
    np.testing.assert_allclose(T, flip_probability_table(K, eps), rtol=1e-12)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, rtol=1e-14)


def test_flip_labels_empirical_rates():
    spec = FlipMechanismSpec(4, 1.0)
    y = np.zeros(200_000, dtype=int)
    out = flip_labels(y, spec, RandomnessSource(1))
    counts = np.bincount(out, minlength=4) / len(y)
    np.testing.assert_allclose(counts, flip_transition_matrix(spec)[0], atol=0.005)


def test_flip_label_is_one_based():
    spec = FlipMechanismSpec(3, 50.0)
    assert flip_label(3, spec, RandomnessSource(0)) == 3
    with pytest.raises(ValidationError):
        flip_label(0, spec, RandomnessSource(0))


def test_flip_labels_rejects_out_of_range():
    with pytest.raises(ValidationError):
        flip_labels(np.array([0, 5]), FlipMechanismSpec(3, 1.0), RandomnessSource(0))


def test_piecewise_constant_and_support():
    spec = PiecewiseMechanismSpec(1.0)
    h = math.exp(0.5)
    assert spec.C == pytest.approx((h + 1) / (h - 1))
    out = piecewise_mechanism(np.linspace(-1, 1, 1000).repeat(50), spec, RandomnessSource(2))
    assert np.all(np.abs(out) <= spec.C + 1e-12)


@given(st.floats(-1, 1), st.floats(0.1, 6))
def test_piecewise_density_normalized(x, eps):
    spec = PiecewiseMechanismSpec(eps)
    t = np.linspace(-spec.C, spec.C, 40001)
    mass = np.trapezoid(piecewise_density(t, x, spec), t)
    assert mass == pytest.approx(1.0, abs=2e-3)


def test_piecewise_unbiased():
    spec = PiecewiseMechanismSpec(2.0)
    for x in (-0.8, 0.0, 0.6):
        out = piecewise_mechanism(np.full(400_000, x), spec, RandomnessSource(3))
        se = out.std() / math.sqrt(out.size)
        assert abs(out.mean() - x) < 5 * se


def test_piecewise_rejects_out_of_domain():
    with pytest.raises(ValidationError):
        piecewise_mechanism(np.array([1.5]), PiecewiseMechanismSpec(1.0), RandomnessSource(0))


def test_randomized_response_rate():
    eps = 1.0
    bits = randomized_response_bit(np.ones(200_000, dtype=int), eps, RandomnessSource(4))
    assert abs((1 - bits.mean()) - rr_flip_prob(eps)) < 0.004


@given(st.floats(0, 1), st.floats(0.0, 0.49))
def test_debias_inverts_expected_flip(A, p):
    assert debias_accuracy(A * (1 - p) + (1 - A) * p, p) == pytest.approx(A, abs=1e-12)


def test_debias_rejects_half():
    with pytest.raises(ValidationError):
        debias_accuracy(0.5, 0.5)


def _mixed_schema():
    cols = [ColumnSpec("a"), ColumnSpec("c", "categorical", cardinality=3), ColumnSpec("b")]
    return TableSchema(cols, {"a": (0.0, 1.0), "b": (-2.0, 2.0)}, "train")


@pytest.mark.parametrize("method", ["laplace", "piecewise"])
def test_per_feature_dispatch(method):
    X = np.array([[0.5, 2, 0.0]] * 5000)
    out = per_feature_privatize(X, _mixed_schema(), 3.0, method, RandomnessSource(5))
    assert set(np.unique(out[:, 1])) <= {0.0, 1.0, 2.0}
    # continuous columns get real-valued noise with the right centre
    assert abs(out[:, 0].mean() - 0.5) < 0.2 and out[:, 0].std() > 0.1


def test_per_feature_budget_split():
    # eps/d per feature: with d = 3 the categorical flip runs at eps/3
    X = np.zeros((100_000, 3))
    out = per_feature_privatize(X, _mixed_schema(), 3.0, "laplace", RandomnessSource(6))
    keep = np.mean(out[:, 1] == 0)
    assert keep == pytest.approx(math.e / (math.e + 2), abs=0.005)


def test_per_feature_clips_to_range():
    sch = continuous_schema(1, lo=0.0, hi=1.0)
    out = per_feature_privatize(np.full((50_000, 1), 7.0), sch, 1.0, "laplace", RandomnessSource(7))
    assert abs(out.mean() - 1.0) < 0.05


def test_per_feature_requires_ranges():
    with pytest.raises(ValidationError):
        per_feature_privatize(np.zeros((2, 1)), continuous_schema(1), 1.0, "laplace", RandomnessSource(0))


def test_privatizer_transformer():
    X = RandomnessSource(8).normal(1.0, (200, 4))
    pf = PerFeaturePrivatizer(epsilon=2.0, random_state=3).fit(X)
    assert pf.epsilon_per_feature_ == 0.5
    a, b = pf.transform(X), pf.transform(X)
    assert a.shape == X.shape and not np.array_equal(a, b)
    assert pf.get_params()["epsilon"] == 2.0
