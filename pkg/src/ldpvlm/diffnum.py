"""Dense feed-forward networks with hand-written reverse-mode gradients.

Everything is float64. A network is a list of affine layers each followed by
an activation; :meth:`DenseNetwork.forward` records a trace that
:meth:`DenseNetwork.backward` consumes exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, ValidationError
from .rng import as_source

__all__ = [
    "Layer",
    "DenseNetwork",
    "ForwardTrace",
    "Adam",
    "nu_clip",
    "per_example_gradients",
    "global_norms",
]

ACTIVATIONS = ("relu", "tanh", "identity", "nu_clip", "softmax")


def nu_clip(y, l):
    """Project rows of ``y`` onto the l1 ball of radius ``l`` by rescaling.

    Rows with ``||y||_1 <= l`` are returned unchanged.
    """
    y = np.asarray(y, dtype=float)
    norm = np.abs(y).sum(axis=-1, keepdims=True)
    factor = np.where(norm > l, l / np.where(norm > 0, norm, 1.0), 1.0)
    return y * factor


def _softmax(a):
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"
    clip_radius: float | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.activation == "nu_clip" and not (self.clip_radius and self.clip_radius > 0):
            raise ValidationError("nu_clip needs a positive clip_radius")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValidationError(f"inconsistent layer shapes {self.W.shape} / {self.b.shape}")

    def activate(self, a):
        kind = self.activation
        if kind == "relu":
            return np.maximum(a, 0.0)
        if kind == "tanh":
            return np.tanh(a)
        if kind == "nu_clip":
            return nu_clip(a, self.clip_radius)
        if kind == "softmax":
            return _softmax(a)
        return a

    def activation_backward(self, a, h, g):
        """Gradient w.r.t. pre-activation ``a`` given output ``h`` and upstream ``g``."""
        kind = self.activation
        if kind == "relu":
            return g * (a > 0)
        if kind == "tanh":
            return g * (1.0 - h * h)
        if kind == "softmax":
            return h * (g - (g * h).sum(axis=-1, keepdims=True))
        if kind == "nu_clip":
            l = self.clip_radius
            s = np.abs(a).sum(axis=-1, keepdims=True)
            # boundary ||a||_1 == l takes the identity branch
            outside = s > l
            s_safe = np.where(outside, s, 1.0)
            clipped = (l / s_safe) * g - l * np.sign(a) * (g * a).sum(axis=-1, keepdims=True) / s_safe**2
            return np.where(outside, clipped, g)
        return g


@dataclass
class ForwardTrace:
    inputs: list
    pre: list
    post: list
    consumed: bool = field(default=False)


class DenseNetwork:
    """Feed-forward stack of :class:`Layer` objects."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValidationError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ValidationError(
                    f"layer widths do not compose: {prev.W.shape[1]} -> {nxt.W.shape[0]}"
                )
        for layer in layers[:-1]:
            if layer.activation in ("nu_clip", "softmax"):
                raise ValidationError(f"{layer.activation} may only be the final activation")
        self.layers = layers

    @classmethod
    def build(cls, sizes, hidden_activation="relu", output_activation="identity",
              clip_radius=None, rng=None):
        """Glorot-uniform weights, zero biases."""
        rng = as_source(rng)
        layers = []
        n = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W = (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * limit
            last = i == n - 1
            layers.append(Layer(
                W, np.zeros(fan_out),
                output_activation if last else hidden_activation,
                clip_radius if last else None,
            ))
        return cls(layers)

    @property
    def input_width(self):
        return self.layers[0].W.shape[0]

    @property
    def output_width(self):
        return self.layers[-1].W.shape[1]

    @property
    def params(self):
        """Parameter arrays in order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def set_params(self, params):
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ValidationError("parameter list length does not match network")
        for layer, W, b in zip(self.layers, params[::2], params[1::2]):
            if W.shape != layer.W.shape or b.shape != layer.b.shape:
                raise ValidationError("parameter shapes do not match network")
            layer.W = np.array(W, dtype=float)
            layer.b = np.array(b, dtype=float)

    def copy(self):
        return DenseNetwork([
            Layer(l.W.copy(), l.b.copy(), l.activation, l.clip_radius) for l in self.layers
        ])

    def forward(self, batch):
        x = np.asarray(batch, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValidationError(
                f"batch of shape {x.shape} does not match input width {self.input_width}"
            )
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite values in network input")
        inputs, pre, post = [], [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            a = h @ layer.W + layer.b
            h = layer.activate(a)
            pre.append(a)
            post.append(h)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite values in network output")
        return h, ForwardTrace(inputs, pre, post)

    def __call__(self, batch):
        return self.forward(batch)[0]

    def _deltas(self, trace, output_gradient):
        if trace.consumed:
            raise ContractError("forward trace already consumed by a backward pass")
        trace.consumed = True
        g = np.asarray(output_gradient, dtype=float)
        if g.shape != trace.post[-1].shape:
            raise ValidationError(
                f"output gradient shape {g.shape} != output shape {trace.post[-1].shape}"
            )
        deltas = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            delta = layer.activation_backward(trace.pre[i], trace.post[i], g)
            deltas[i] = delta
            g = delta @ layer.W.T
        return deltas, g

    def backward(self, trace, output_gradient):
        """Batch-summed parameter gradients and the gradient w.r.t. the input."""
        deltas, g_in = self._deltas(trace, output_gradient)
        grads = []
        for a_in, delta in zip(trace.inputs, deltas):
            grads.extend([a_in.T @ delta, delta.sum(axis=0)])
        if not all(np.all(np.isfinite(gr)) for gr in grads):
            raise FloatingPointError("non-finite gradient")
        return grads, g_in

    def backward_per_example(self, trace, output_gradient):
        """Per-record parameter gradients, each with a leading batch axis."""
        deltas, g_in = self._deltas(trace, output_gradient)
        grads = []
        for a_in, delta in zip(trace.inputs, deltas):
            grads.extend([np.einsum("ni,no->nio", a_in, delta), delta.copy()])
        return grads, g_in


def per_example_gradients(net, batch, loss_fn):
    """Per-record gradients of ``loss_fn`` for every record of ``batch``.

    ``loss_fn(output)`` returns ``(losses, d_losses/d_output)`` row by row.
    The result is a list aligned with ``net.params``; entry ``p`` has shape
    ``(n,) + params[p].shape`` and ``result[p][k]`` is what ``backward``
    returns for record ``k`` alone.
    """
    out, trace = net.forward(batch)
    _, g_out = loss_fn(out)
    grads, _ = net.backward_per_example(trace, g_out)
    return grads


def global_norms(per_example):
    """Joint l2 norm over all parameters for each record."""
    sq = sum((g.reshape(g.shape[0], -1) ** 2).sum(axis=1) for g in per_example)
    return np.sqrt(sq)


class Adam:
    """Adam on a list of arrays, updated in place."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(update)):
                raise FloatingPointError("non-finite Adam update")
            p -= update
