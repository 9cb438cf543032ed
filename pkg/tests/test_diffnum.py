import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldpvlm.diffnum import Adam, DenseNetwork, Layer, global_norms, nu_clip, per_example_gradients
from ldpvlm.exceptions import ContractError, ValidationError
from ldpvlm.rng import RandomnessSource
from oracles import central_difference, relative_error

rows = arrays(np.float64, (5, 4), elements=st.floats(-50, 50))


@given(rows, st.floats(0.1, 20))
def test_nu_clip_projects_into_ball(y, l):
    out = nu_clip(y, l)
    assert np.all(np.abs(out).sum(axis=1) <= l * (1 + 1e-12))
    np.testing.assert_allclose(nu_clip(out, l), out, rtol=1e-12, atol=1e-12)


def test_nu_clip_leaves_interior_unchanged():
    y = np.array([[0.5, -0.2, 0.1]])
    assert np.array_equal(nu_clip(y, 1.0), y)


def test_nu_clip_rescales_direction():
    out = nu_clip(np.array([[3.0, -1.0]]), 2.0)
    np.testing.assert_allclose(out, [[1.5, -0.5]])


def test_layer_shape_validation():
    with pytest.raises(ValidationError):
        Layer(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValidationError):
        Layer(np.zeros((3, 2)), np.zeros(2), "nu_clip")


def test_network_rejects_non_composing_layers():
    with pytest.raises(ValidationError):
        DenseNetwork([Layer(np.zeros((3, 2)), np.zeros(2)), Layer(np.zeros((4, 2)), np.zeros(2))])


def test_clip_only_in_last_layer():
    with pytest.raises(ValidationError):
        DenseNetwork([Layer(np.zeros((3, 2)), np.zeros(2), "nu_clip", 1.0),
                      Layer(np.zeros((2, 2)), np.zeros(2))])


@pytest.mark.parametrize("out_act", ["identity", "softmax", "nu_clip", "tanh"])
def test_backward_matches_finite_differences(out_act):
    rng = RandomnessSource(0)
    net = DenseNetwork.build([4, 6, 3], "tanh", out_act, clip_radius=0.5, rng=rng)
    X = rng.normal(1.0, (7, 4))
    w = rng.normal(1.0, (7, 3))

    def f():
        return float((net(X) * w).sum())

    out, trace = net.forward(X)
    grads, g_in = net.backward(trace, w)
    for p, g in zip(net.params, grads):
        assert relative_error(g, central_difference(f, p)) < 1e-6
    assert relative_error(g_in, central_difference(f, X)) < 1e-6


def test_per_example_matches_loop():
    rng = RandomnessSource(1)
    net = DenseNetwork.build([3, 5, 2], "relu", "identity", rng=rng)
    X = rng.normal(1.0, (6, 3))

    def loss_fn(out):
        return 0.5 * (out**2).sum(axis=1), out

    per = per_example_gradients(net, X, loss_fn)
    for k in range(len(X)):
        out, trace = net.forward(X[k:k + 1])
        single, _ = net.backward(trace, out)
        for a, b in zip(per, single):
            np.testing.assert_allclose(a[k], b, rtol=1e-12, atol=1e-14)
    norms = global_norms(per)
    assert norms.shape == (6,)


def test_trace_cannot_be_reused():
    net = DenseNetwork.build([2, 2], rng=RandomnessSource(0))
    out, trace = net.forward(np.ones((1, 2)))
    net.backward(trace, np.ones_like(out))
    with pytest.raises(ContractError):
        net.backward(trace, np.ones_like(out))


def test_forward_flags_non_finite():
    net = DenseNetwork.build([2, 2], rng=RandomnessSource(0))
    with pytest.raises(FloatingPointError):
        net.forward(np.array([[np.inf, 0.0]]))


def test_adam_minimizes_quadratic():
    x = [np.array([5.0, -3.0])]
    opt = Adam(0.1)
    for _ in range(500):
        opt.step(x, [2 * x[0]])
    assert np.abs(x[0]).max() < 1e-2


def test_copy_and_set_params_are_independent():
    net = DenseNetwork.build([2, 3, 1], rng=RandomnessSource(2))
    clone = net.copy()
    clone.params[0][...] = 0.0
    assert np.abs(net.params[0]).sum() > 0
    net.set_params(clone.params)
    assert np.abs(net.params[0]).sum() == 0
