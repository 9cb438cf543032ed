"""Reference computations that share no code with the package.

Each oracle goes back to a definition (an integral, a finite difference, an
empirical frequency) instead of a closed form.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special


def laplace_kl_quadrature(mu, b, b0):
    """KL(Laplace(mu, b) || Laplace(0, b0)) by integrating q log(q/p)."""

    def integrand(z):
        log_q = -math.log(2 * b) - abs(z - mu) / b
        log_p = -math.log(2 * b0) - abs(z) / b0
        return math.exp(log_q) * (log_q - log_p)

    lo, hi = mu - 60 * b, mu + 60 * b
    points = sorted({mu, 0.0} & {x for x in (mu, 0.0) if lo < x < hi})
    val, _ = integrate.quad(integrand, lo, hi, points=points or None, limit=400,
                            epsabs=1e-13, epsrel=1e-12)
    return val


def sampled_gaussian_rdp_quadrature(q, sigma, alpha):
    """Renyi divergence of order ``alpha`` between (1-q)N(0,s^2)+qN(1,s^2) and N(0,s^2).

    Computed as log E_{x~N(0,s^2)}[((1-q) + q exp((2x-1)/(2s^2)))^alpha] / (alpha-1),
    with the integral taken numerically in a shifted log domain.
    """
    if q == 0:
        return 0.0

    def log_f(x):
        t = (2 * x - 1) / (2 * sigma**2)
        inner = np.logaddexp(math.log1p(-q), math.log(q) + t) if q < 1 else t
        return alpha * inner - x**2 / (2 * sigma**2) - math.log(sigma * math.sqrt(2 * math.pi))

    # the integrand has its mass near x = 0 (no-sample branch) and x = alpha (sampled branch)
    lo, hi = -40 * sigma, alpha + 40 * sigma
    grid = np.linspace(lo, hi, 40001)
    peak = float(log_f(grid).max())
    val, _ = integrate.quad(lambda x: math.exp(float(log_f(x)) - peak), lo, hi,
                            points=[0.0, 0.5, float(alpha)], limit=2000, epsabs=0, epsrel=1e-11)
    return (peak + math.log(val)) / (alpha - 1)


def epsilon_from_rdp_oracle(q, sigma, steps, delta, orders):
    """(epsilon, delta) from RDP over ``orders`` using
    eps = rdp + log((a-1)/a) - (log delta + log a)/(a-1)."""
    best = math.inf
    for a in orders:
        rdp = steps * sampled_gaussian_rdp_quadrature(q, sigma, a)
        eps = rdp + math.log((a - 1) / a) - (math.log(delta) + math.log(a)) / (a - 1)
        best = min(best, eps)
    return max(best, 0.0)


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences (x is restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def flip_probability_table(K, eps):
    """p(output | input) for K-ary randomized response, straight from the definition."""
    keep = math.exp(eps) / (math.exp(eps) + K - 1)
    other = 1.0 / (math.exp(eps) + K - 1)
    return np.where(np.eye(K, dtype=bool), keep, other)


def bound_k2(eps):
    """Binary case of the private-accuracy bound: 1 - exp(-eps/2)/2."""
    return 1.0 - math.exp(-eps / 2.0) / 2.0


def normal_cdf(x):
    return 0.5 * special.erfc(-x / math.sqrt(2))
