"""Local randomizers: Laplace, piecewise, K-ary flip, randomized response.

All functions are pure given their :class:`~ldpvlm.rng.RandomnessSource`.
Class labels are 1-based at the scalar boundary (:func:`flip_label`) and
0-based in the vectorized internals (:func:`flip_labels`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ValidationError
from .rng import as_source
from .schema import TableSchema, continuous_schema

__all__ = [
    "LaplaceMechanismSpec",
    "FlipMechanismSpec",
    "PiecewiseMechanismSpec",
    "laplace_mechanism",
    "flip_label",
    "flip_labels",
    "flip_transition_matrix",
    "piecewise_mechanism",
    "piecewise_density",
    "randomized_response_bit",
    "rr_flip_prob",
    "debias_accuracy",
    "per_feature_privatize",
    "PerFeaturePrivatizer",
]


def _check_epsilon(epsilon, name="epsilon", allow_zero=False):
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon < 0 or (epsilon == 0 and not allow_zero):
        raise ValidationError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class LaplaceMechanismSpec:
    sensitivity: float
    epsilon: float

    def __post_init__(self):
        if not self.sensitivity > 0 or not math.isfinite(self.sensitivity):
            raise ValidationError(f"sensitivity must be positive and finite, got {self.sensitivity}")
        _check_epsilon(self.epsilon)

    @property
    def scale(self):
        return self.sensitivity / self.epsilon


@dataclass(frozen=True)
class FlipMechanismSpec:
    """K-ary randomized response. ``epsilon_y = inf`` disables flipping."""

    num_classes: int
    epsilon_y: float

    def __post_init__(self):
        if int(self.num_classes) != self.num_classes or self.num_classes < 2:
            raise ValidationError(f"num_classes must be an integer >= 2, got {self.num_classes}")
        _check_epsilon(self.epsilon_y, "epsilon_y", allow_zero=True)

    @property
    def flip_prob(self):
        k = self.num_classes
        if math.isinf(self.epsilon_y):
            return 0.0
        return (k - 1) / (math.exp(self.epsilon_y) + k - 1)

    @property
    def is_informative(self):
        """False at epsilon_y = 0, where the flipped label carries no signal."""
        return self.flip_prob < (self.num_classes - 1) / self.num_classes


@dataclass(frozen=True)
class PiecewiseMechanismSpec:
    epsilon: float

    def __post_init__(self):
        _check_epsilon(self.epsilon)

    @property
    def C(self):
        if math.isinf(self.epsilon):
            return 1.0
        h = math.exp(self.epsilon / 2)
        return (h + 1) / (h - 1)


def laplace_mechanism(v, spec: LaplaceMechanismSpec, rng):
    """Return ``v`` plus iid Laplace(0, sensitivity/epsilon) noise."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValidationError("laplace_mechanism input contains non-finite values")
    if math.isinf(spec.epsilon):
        return v.copy()
    return v + as_source(rng).laplace(spec.scale, v.shape)


def flip_labels(y, spec: FlipMechanismSpec, rng):
    """Vectorized flip of 0-based labels ``y``.

    Each label is kept with probability 1-p, otherwise replaced by one of the
    other K-1 classes chosen uniformly.
    """
    y = np.asarray(y)
    k = spec.num_classes
    if y.size and (y.min() < 0 or y.max() >= k or not np.issubdtype(y.dtype, np.integer)):
        raise ValidationError(f"labels must be integers in [0, {k})")
    rng = as_source(rng)
    flip = rng.uniform(y.shape) < spec.flip_prob
    offset = rng.integers(1, k, y.shape)
    return np.where(flip, (y + offset) % k, y).astype(np.int64)


def flip_label(y: int, spec: FlipMechanismSpec, rng) -> int:
    """Flip a single 1-based class label in ``{1, ..., K}``."""
    if int(y) != y or not 1 <= y <= spec.num_classes:
        raise ValidationError(f"label {y} outside 1..{spec.num_classes}")
    return int(flip_labels(np.array([int(y) - 1]), spec, rng)[0]) + 1


def flip_transition_matrix(spec: FlipMechanismSpec):
    """K x K matrix with entry [j, i] = p(flipped = i | true = j); rows sum to one."""
    k = spec.num_classes
    p = spec.flip_prob
    T = np.full((k, k), p / (k - 1))
    np.fill_diagonal(T, 1.0 - p)
    return T


def piecewise_mechanism(x, spec: PiecewiseMechanismSpec, rng):
    """Piecewise mechanism on inputs in [-1, 1]; output in [-C, C], unbiased.

    With probability e^{eps/2}/(e^{eps/2}+1) the output is uniform on the
    high-density window [l(x), l(x) + C - 1]; otherwise uniform on the rest of
    [-C, C].
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1):
        raise ValidationError("piecewise_mechanism inputs must lie in [-1, 1]")
    if math.isinf(spec.epsilon):
        return x.copy()
    rng = as_source(rng)
    C = spec.C
    h = math.exp(spec.epsilon / 2)
    left = (C + 1) / 2 * x - (C - 1) / 2
    right = left + C - 1
    inside = rng.uniform(x.shape) < h / (h + 1)
    u = rng.uniform(x.shape)
    centre = left + u * (C - 1)
    # complement [-C, left) U (right, C] has total length C + 1
    v = u * (C + 1)
    below = v < left + C
    outer = np.where(below, -C + v, right + (v - (left + C)))
    return np.where(inside, centre, outer)


def piecewise_density(t, x, spec: PiecewiseMechanismSpec):
    """Exact output density of :func:`piecewise_mechanism` at ``t`` for input ``x``."""
    C = spec.C
    e = math.exp(spec.epsilon)
    h = math.exp(spec.epsilon / 2)
    high = (e - h) / (2 * h + 2)
    left = (C + 1) / 2 * x - (C - 1) / 2
    right = left + C - 1
    t = np.asarray(t, dtype=float)
    dens = np.where((t >= left) & (t <= right), high, high / e)
    return np.where(np.abs(t) <= C, dens, 0.0)


def rr_flip_prob(epsilon):
    """Binary randomized-response flip probability 1/(e^eps + 1)."""
    epsilon = _check_epsilon(epsilon)
    if math.isinf(epsilon):
        return 0.0
    return 1.0 / (math.exp(epsilon) + 1.0)


def randomized_response_bit(c, epsilon, rng):
    """Report bit(s) ``c``, each flipped with probability 1/(e^eps + 1)."""
    p = rr_flip_prob(epsilon)
    c = np.asarray(c)
    if c.size and not np.all((c == 0) | (c == 1)):
        raise ValidationError("randomized_response_bit expects bits in {0, 1}")
    flip = as_source(rng).uniform(c.shape) < p
    out = np.where(flip, 1 - c, c).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def debias_accuracy(A_tilde, p):
    """Invert the expected effect of flipping correctness bits with probability ``p``.

    The estimate is not clipped to [0, 1].
    """
    p = float(p)
    if not 0 <= p < 0.5:
        raise ValidationError(f"flip probability must be in [0, 1/2), got {p}")
    A = (np.asarray(A_tilde, dtype=float) - p) / (1.0 - 2.0 * p)
    return float(A) if A.ndim == 0 else A


def per_feature_privatize(X, schema: TableSchema, epsilon, method="laplace", rng=None, names=None):
    """Noise every feature of ``X`` independently with budget ``epsilon / d``.

    ``X`` holds one column per schema feature (categoricals as integer codes,
    pre-one-hot). Continuous columns are clipped to their recorded range; the
    Laplace variant uses the range width as sensitivity, the piecewise variant
    maps to [-1, 1], randomizes, and maps the unbiased output back. Categorical
    columns go through the K-ary flip.
    """
    if method not in ("laplace", "piecewise"):
        raise ValidationError(f"unknown method {method!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    names = list(names) if names is not None else [c.name for c in schema.features]
    if X.shape[1] != len(names):
        raise ValidationError(f"expected {len(names)} feature columns, got {X.shape[1]}")
    epsilon = _check_epsilon(epsilon)
    d = len(names)
    eps_i = epsilon / d
    rng = as_source(rng)
    out = np.empty_like(X)
    for j, name in enumerate(names):
        col = schema.column(name)
        sub = rng.spawn("feature", j)
        if col.kind == "categorical":
            codes = X[:, j].astype(np.int64)
            out[:, j] = flip_labels(codes, FlipMechanismSpec(col.cardinality, eps_i), sub)
            continue
        if name not in schema.ranges:
            raise ValidationError(f"no recorded range for continuous feature {name!r}")
        lo, hi = schema.ranges[name]
        width = hi - lo
        x = np.clip(X[:, j], lo, hi)
        if width <= 0:
            out[:, j] = x
        elif method == "laplace":
            out[:, j] = laplace_mechanism(x, LaplaceMechanismSpec(width, eps_i), sub)
        else:
            unit = 2.0 * (x - lo) / width - 1.0
            noisy = piecewise_mechanism(np.clip(unit, -1.0, 1.0), PiecewiseMechanismSpec(eps_i), sub)
            out[:, j] = lo + (noisy + 1.0) * width / 2.0
    return out


class PerFeaturePrivatizer(TransformerMixin, BaseEstimator):
    """Per-feature LDP benchmark as a transformer.

    ``fit`` records continuous ranges on the data it sees (the VLM-training
    split); ``transform`` privatizes rows with a fresh draw per call.
    """

    def __init__(self, epsilon=1.0, method="laplace", schema=None, random_state=0):
        self.epsilon = epsilon
        self.method = method
        self.schema = schema
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if self.schema is None:
            schema = continuous_schema(X.shape[1])
        else:
            schema = self.schema
        names = [c.name for c in schema.features]
        self.schema_ = schema.with_ranges(X, names, fit_on="fit")
        self.n_features_in_ = X.shape[1]
        self._calls = 0
        return self

    def transform(self, X):
        check_is_fitted(self, "schema_")
        rng = as_source(self.random_state).spawn("transform", self._calls)
        self._calls += 1
        return per_feature_privatize(X, self.schema_, self.epsilon, self.method, rng)

    @property
    def epsilon_per_feature_(self):
        check_is_fitted(self, "schema_")
        return self.epsilon / self.n_features_in_
