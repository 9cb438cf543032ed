"""DP-Adam (per-example clipping + Gaussian noise + Adam) and its RDP accountant.

The accountant tracks the Renyi divergence of the sampled Gaussian mechanism
over a grid of orders and converts to (epsilon, delta). Batches are drawn as
fixed-size uniform subsets and accounted with sampling rate
``q = batch_size / dataset_size``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .diffnum import Adam, global_norms
from .exceptions import BudgetExhaustedError, ValidationError
from .rng import as_source

__all__ = [
    "DpAdamConfig",
    "AccountantState",
    "DEFAULT_ORDERS",
    "clip_per_example",
    "DpAdam",
    "dp_adam_step",
    "compute_rdp",
    "rdp_to_epsilon",
    "account_epsilon",
    "steps_for_target_epsilon",
]

DEFAULT_ORDERS = tuple(1.0 + 0.25 * k for k in range(1, 253))  # 1.25, 1.5, ..., 64


@dataclass(frozen=True)
class DpAdamConfig:
    noise_multiplier: float
    batch_size: int
    dataset_size: int
    learning_rate: float = 5e-4
    max_grad_norm: float = 1.0
    delta: float = 1e-5

    def __post_init__(self):
        if self.noise_multiplier < 0:
            raise ValidationError("noise_multiplier must be >= 0")
        if self.batch_size < 1 or self.dataset_size < 1:
            raise ValidationError("batch_size and dataset_size must be positive")
        if self.batch_size > self.dataset_size:
            raise ValidationError(
                f"sampling rate q = {self.batch_size}/{self.dataset_size} exceeds 1"
            )
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if not self.max_grad_norm > 0:
            raise ValidationError("max_grad_norm must be positive")

    @property
    def sampling_rate(self):
        return self.batch_size / self.dataset_size


def clip_per_example(gradients, max_norm):
    """Scale each record's gradient (jointly over all parameters) to l2 norm <= max_norm.

    ``gradients`` is a list of arrays with a leading per-record axis, as
    returned by :func:`ldpvlm.diffnum.per_example_gradients`.
    """
    norms = global_norms(gradients)
    if math.isinf(max_norm):
        factor = np.ones_like(norms)
    else:
        factor = np.minimum(1.0, max_norm / np.maximum(norms, 1e-300))
    return [g * factor.reshape((-1,) + (1,) * (g.ndim - 1)) for g in gradients]


def _noisy_mean(clipped, config, rng):
    sigma = config.noise_multiplier * config.max_grad_norm
    out = []
    for g in clipped:
        total = g.sum(axis=0)
        if sigma > 0:
            total = total + rng.normal(sigma, total.shape)
        out.append(total / config.batch_size)
    return out


def dp_adam_step(params, clipped, config: DpAdamConfig, adam_state: Adam, rng):
    """One DP-Adam update, in place on ``params``; returns ``(params, adam_state)``."""
    noisy = _noisy_mean(clipped, config, as_source(rng))
    adam_state.step(params, noisy)
    return params, adam_state


class DpAdam:
    """Stateful DP-Adam optimizer bound to a parameter list."""

    def __init__(self, config: DpAdamConfig, rng=None):
        self.config = config
        self.adam = Adam(config.learning_rate)
        self.rng = as_source(rng)
        self.steps = 0

    def step(self, params, per_example_grads):
        clipped = clip_per_example(per_example_grads, self.config.max_grad_norm)
        dp_adam_step(params, clipped, self.config, self.adam, self.rng.spawn("step", self.steps))
        self.steps += 1
        return params


# --- accountant -----------------------------------------------------------

def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    return max(a, b) + math.log1p(math.exp(-abs(a - b)))


def _log_sub(a, b):
    if b == -math.inf:
        return a
    if a == b:
        return -math.inf
    if a < b:
        raise ValueError("log-sub of a larger value")
    return a + math.log1p(-math.exp(b - a))


def _log_a_int(q, sigma, alpha):
    log_a = -math.inf
    for k in range(alpha + 1):
        term = (
            math.log(special.binom(alpha, k))
            + k * math.log(q)
            + (alpha - k) * math.log1p(-q)
            + (k * k - k) / (2.0 * sigma**2)
        )
        log_a = _log_add(log_a, term)
    return log_a


def _log_erfc(x):
    return math.log(2.0) + special.log_ndtr(-x * math.sqrt(2.0))


def _log_a_frac(q, sigma, alpha):
    # two-sided series split at z0 where the mixture components cross
    log_a0, log_a1 = -math.inf, -math.inf
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * sigma))
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma**2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma**2) + log_e1
        if coef > 0:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30:
            break
    return _log_add(log_a0, log_a1)


def _rdp_single_step(q, sigma, alpha):
    if q == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    if q == 1.0:
        return alpha / (2.0 * sigma**2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, alpha)
    return log_a / (alpha - 1.0)


def compute_rdp(q, noise_multiplier, steps, orders=DEFAULT_ORDERS):
    """RDP of ``steps`` compositions of the sampled Gaussian at each order."""
    if not 0 <= q <= 1:
        raise ValidationError(f"sampling rate must lie in [0, 1], got {q}")
    return np.array([_rdp_single_step(q, noise_multiplier, a) * steps for a in orders])


def rdp_to_epsilon(orders, rdp, delta):
    """Convert per-order RDP to (epsilon, best order).

    Uses eps = rdp + log((a-1)/a) - (log(delta) + log(a)) / (a-1), floored at 0.
    """
    orders = np.asarray(orders, dtype=float)
    rdp = np.asarray(rdp, dtype=float)
    eps = rdp + np.log1p(-1.0 / orders) - (math.log(delta) + np.log(orders)) / (orders - 1.0)
    eps = np.where(np.isnan(eps), np.inf, eps)
    idx = int(np.argmin(eps))
    return max(0.0, float(eps[idx])), float(orders[idx])


@dataclass
class AccountantState:
    """Running RDP totals, for accounting a training loop step by step."""

    q: float
    noise_multiplier: float
    orders: tuple = DEFAULT_ORDERS
    steps: int = 0
    rdp: np.ndarray = field(default=None)

    def __post_init__(self):
        self._per_step = compute_rdp(self.q, self.noise_multiplier, 1, self.orders)
        if self.rdp is None:
            self.rdp = np.zeros(len(self.orders))

    def step(self, n=1):
        self.steps += n
        self.rdp = self._per_step * self.steps
        return self

    def epsilon(self, delta):
        if self.steps == 0:
            return 0.0, float(self.orders[0])
        return rdp_to_epsilon(self.orders, self.rdp, delta)


def account_epsilon(config: DpAdamConfig, steps, orders=DEFAULT_ORDERS):
    """Central epsilon after ``steps`` DP-Adam steps at ``config.delta``."""
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    if steps == 0:
        return 0.0
    rdp = compute_rdp(config.sampling_rate, config.noise_multiplier, steps, orders)
    return rdp_to_epsilon(orders, rdp, config.delta)[0]


def accountant_report(config: DpAdamConfig, steps, orders=DEFAULT_ORDERS):
    """Serializable summary (sigma, q, steps, delta, epsilon, order)."""
    if steps == 0:
        eps, order = 0.0, float(orders[0])
    else:
        rdp = compute_rdp(config.sampling_rate, config.noise_multiplier, steps, orders)
        eps, order = rdp_to_epsilon(orders, rdp, config.delta)
    return {
        "noise_multiplier": float(config.noise_multiplier),
        "sampling_rate": float(config.sampling_rate),
        "batch_size": int(config.batch_size),
        "dataset_size": int(config.dataset_size),
        "steps": int(steps),
        "delta": float(config.delta),
        "epsilon": float(eps),
        "order": float(order),
    }


def steps_for_target_epsilon(config: DpAdamConfig, target_epsilon, orders=DEFAULT_ORDERS,
                             max_steps=10**8):
    """Largest step count whose accounted epsilon stays <= ``target_epsilon``."""
    if not target_epsilon > 0:
        raise ValidationError("target epsilon must be positive")
    if math.isinf(target_epsilon):
        return max_steps
    per_step = compute_rdp(config.sampling_rate, config.noise_multiplier, 1, orders)

    def eps_at(t):
        return rdp_to_epsilon(orders, per_step * t, config.delta)[0]

    if eps_at(1) > target_epsilon:
        raise BudgetExhaustedError(
            f"target epsilon {target_epsilon} is below the cost of a single step ({eps_at(1):.4g})"
        )
    lo, hi = 1, 2
    while eps_at(hi) <= target_epsilon:
        lo, hi = hi, hi * 2
        if hi > max_steps:
            return max_steps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eps_at(mid) <= target_epsilon:
            lo = mid
        else:
            hi = mid
    return lo
