"""Private validation, private hyperparameter search and the private-accuracy bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .exceptions import ValidationError
from .mechanisms import debias_accuracy, randomized_response_bit, rr_flip_prob
from .rng import as_source

__all__ = [
    "PrivateValidationReport",
    "BoundQuery",
    "GridSearchResult",
    "private_validation",
    "private_validation_from_bits",
    "private_grid_search",
    "accuracy_upper_bound",
    "accuracy_upper_bound_raw",
    "bound_summary",
    "bound_simulation_oracle",
]


@dataclass
class PrivateValidationReport:
    n_val: int
    epsilon: float
    p: float
    A_tilde: float
    A_hat: float
    std_error: float

    @property
    def out_of_range(self):
        """The debiased estimate is returned unclipped; flag values outside [0, 1]."""
        return not 0.0 <= self.A_hat <= 1.0

    def as_dict(self):
        return {
            "n_val": self.n_val, "epsilon": self.epsilon, "p": self.p,
            "A_tilde": self.A_tilde, "A_hat": self.A_hat, "std_error": self.std_error,
            "out_of_range": self.out_of_range,
        }


def private_validation_from_bits(correct, epsilon, rng):
    """Flip each respondent's correctness bit locally, then aggregate and debias.

    Only the flipped bits are used after the randomizer.
    """
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    correct = np.asarray(correct, dtype=np.int64)
    if correct.size == 0:
        raise ValidationError("empty validation set")
    reported = randomized_response_bit(correct, epsilon, rng)
    p = rr_flip_prob(epsilon)
    n = correct.size
    A_tilde = float(np.mean(reported))
    A_hat = debias_accuracy(A_tilde, p)
    std_error = math.sqrt(A_tilde * (1.0 - A_tilde) / n) / (1.0 - 2.0 * p)
    return PrivateValidationReport(n, epsilon, p, A_tilde, A_hat, std_error)


def private_validation(classifier, X_val, y_val, epsilon, rng=None):
    """Estimate accuracy from randomized-response correctness reports.

    ``classifier`` is anything with ``predict``; each respondent evaluates it
    on their own record.
    """
    correct = (np.asarray(classifier.predict(X_val)) == np.asarray(y_val)).astype(np.int64)
    return private_validation_from_bits(correct, epsilon, rng)


@dataclass
class GridSearchResult:
    best_index: int
    best: object
    reports: list
    failures: dict = field(default_factory=dict)
    n_queries: int = 0
    epsilon_per_query: float = 0.0

    @property
    def respondent_epsilon_spent(self):
        """Each successful candidate queried every validation respondent once."""
        return self.n_queries * self.epsilon_per_query


def private_grid_search(candidates, X_train, y_train, X_val, y_val, epsilon_per_query,
                        rng=None, fit=None):
    """Fit every candidate and pick the largest privately-validated accuracy.

    ``candidates`` are unfitted estimators. ``fit(candidate, X, y)`` overrides
    the default ``candidate.fit(X, y)``. Ties go to the lowest index; a
    candidate that raises is recorded and skipped.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("no candidates to search over")
    rng = as_source(rng)
    reports = [None] * len(candidates)
    failures = {}
    fitted = [None] * len(candidates)
    for i, cand in enumerate(candidates):
        try:
            model = fit(cand, X_train, y_train) if fit is not None else cand.fit(X_train, y_train)
        except Exception as err:  # noqa: BLE001 - recorded, candidate skipped
            failures[i] = f"{type(err).__name__}: {err}"
            continue
        fitted[i] = model if model is not None else cand
        reports[i] = private_validation(fitted[i], X_val, y_val, epsilon_per_query, rng.spawn("query", i))
    ok = [i for i, r in enumerate(reports) if r is not None]
    if not ok:
        raise RuntimeError(f"every grid-search candidate failed: {failures}")
    best = max(ok, key=lambda i: (reports[i].A_hat, -i))
    return GridSearchResult(best, fitted[best], reports, failures, len(ok), float(epsilon_per_query))


@dataclass(frozen=True)
class BoundQuery:
    K: int
    epsilon: float
    d: int | None = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2 or self.K % 2:
            raise ValidationError(f"the bound needs an even number of classes K >= 2, got {self.K}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.d is not None and self.d < self.K // 2:
            raise ValidationError(f"latent dimension {self.d} < K/2 = {self.K // 2}")


def accuracy_upper_bound_raw(query: BoundQuery):
    """Unclamped bound on the accuracy of classifying Laplace-privatized latents."""
    K, eps = query.K, float(query.epsilon)
    if math.isinf(eps):
        return 1.0
    m = K // 2 - 1
    half = math.exp(-eps / 2.0)
    terms = []
    for j in range(m + 1):
        if j == 1:
            continue
        coef = comb(m, j, exact=True) * (-1) ** j / (1 - j)
        terms.append(coef * (math.exp(-j * eps / 2.0) / (1 + j) - half / 2.0))
    terms.append(-(eps + 1.0) / 8.0 * (K - 2) * half)
    return math.fsum(terms)


def accuracy_upper_bound(query: BoundQuery):
    """Bound value in [0, 1]; only floating-point overshoot below 1e-12 is clamped."""
    raw = accuracy_upper_bound_raw(query)
    if -1e-12 < raw < 0.0:
        return 0.0
    if 1.0 < raw < 1.0 + 1e-12:
        return 1.0
    return raw


def bound_summary(query: BoundQuery):
    """Raw bound next to the chance-level floor max(raw, 1/K)."""
    raw = accuracy_upper_bound_raw(query)
    return {"K": query.K, "epsilon": query.epsilon, "raw": raw, "floored": max(raw, 1.0 / query.K)}


def bound_simulation_oracle(K, d, epsilon, n_samples, rng=None, sensitivity=2.0,
                            shard_size=1_000_000):
    """Monte Carlo accuracy of the best-case latent classifier.

    Class centres sit on the +/- axis vertices of the l1 ball of radius
    ``sensitivity / 2`` along the first K/2 axes; Laplace(sensitivity/epsilon)
    noise is added on all ``d`` axes and points are assigned to the vertex with
    the largest signed coordinate. Returns ``(accuracy, standard_error)``.
    Shards use their own child streams, so results do not depend on how many
    shards run concurrently.
    """
    query = BoundQuery(K, epsilon, d)
    rng = as_source(rng)
    half = K // 2
    radius = sensitivity / 2.0
    scale = sensitivity / float(query.epsilon)
    correct = 0
    done = 0
    shard = 0
    while done < n_samples:
        n = min(shard_size, n_samples - done)
        srng = rng.spawn("shard", shard)
        y = srng.integers(0, K, n)
        axis = y % half
        sign = np.where(y < half, 1.0, -1.0)
        pts = srng.laplace(scale, (n, half))  # axes beyond K/2 do not affect the decision
        pts[np.arange(n), axis] += sign * radius
        signed = np.concatenate([pts, -pts], axis=1)
        correct += int(np.count_nonzero(np.argmax(signed, axis=1) == y))
        done += n
        shard += 1
    acc = correct / n_samples
    return acc, math.sqrt(acc * (1.0 - acc) / n_samples)
