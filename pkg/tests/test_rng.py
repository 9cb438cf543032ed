import math

import numpy as np
import pytest
from scipy import stats

from ldpvlm.rng import RandomnessSource, as_source


def test_same_seed_same_stream():
    a, b = RandomnessSource(7), RandomnessSource(7)
    assert np.array_equal(a.uniform(100), b.uniform(100))


def test_spawn_ignores_parent_consumption():
    a, b = RandomnessSource(3), RandomnessSource(3)
    a.uniform(1000)
    assert np.array_equal(a.spawn("x", 1).uniform(10), b.spawn("x", 1).uniform(10))


def test_spawn_coordinates_distinguish_streams():
    r = RandomnessSource(0)
    draws = {c: r.spawn(*c).uniform(4).tobytes() for c in [("a",), ("b",), ("a", 1), (1, "a"), (1.5,),
                                                            (math.inf,), (2**40,)]}
    assert len(set(draws.values())) == len(draws)


def test_spawn_float_and_int_coordinates_differ():
    r = RandomnessSource(0)
    assert r.spawn(1).seed != r.spawn(1.0).seed


def test_uniform_open_interval():
    u = RandomnessSource(1).uniform(200_000)
    assert u.min() > 0 and u.max() < 1


def test_laplace_matches_distribution():
    x = RandomnessSource(2).laplace(1.7, 50_000)
    assert stats.kstest(x, stats.laplace(scale=1.7).cdf).pvalue > 1e-3


def test_choice_without_replacement():
    c = RandomnessSource(4).choice(50, 50)
    assert sorted(c.tolist()) == list(range(50))


def test_as_source():
    src = RandomnessSource(5)
    assert as_source(src) is src
    assert as_source(5).seed == 5
    assert as_source(None).seed == 0


def test_bad_seed():
    with pytest.raises(ValueError):
        RandomnessSource(-1)
