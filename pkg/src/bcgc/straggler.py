"""Worker cycle-time models and their order statistics.

Worker CPU cycle times are i.i.d.; the shifted-exponential family
``Pr[T <= t] = 1 - exp(-mu (t - t0))`` has closed forms for the mean and
harmonic-mean order statistics used by the closed-form allocations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

EULER_GAMMA = 0.57721566490153286061

# |x| at which Ei switches from the power series to the continued fraction.
_SERIES_CUTOFF = 6.0


@dataclass(frozen=True)
class ShiftedExponential:
    """Shifted-exponential cycle time with rate ``mu`` and shift ``t0``."""

    mu: float
    t0: float = 0.0

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be a finite positive rate, got {self.mu!r}")
        if not (self.t0 >= 0 and math.isfinite(self.t0)):
            raise ValueError(f"t0 must be finite and >= 0, got {self.t0!r}")

    @property
    def mean(self) -> float:
        return 1.0 / self.mu + self.t0

    def sample(self, rng, n_workers: int, size: int | None = None) -> np.ndarray:
        shape = (n_workers,) if size is None else (size, n_workers)
        return self.t0 + rng.exponential(1.0 / self.mu, shape)


@dataclass(frozen=True)
class FixedTimes:
    """Degenerate distribution: every draw returns the same cycle times.

    Useful as a zero-variance surrogate (the ``mu -> inf`` limit with
    given per-worker times) and as a point-mass stub in tests.
    """

    times: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t <= 0):
            raise ValueError("times must be a nonempty vector of positive reals")
        object.__setattr__(self, "times", tuple(float(v) for v in t))

    def sample(self, rng, n_workers: int, size: int | None = None) -> np.ndarray:
        if n_workers != len(self.times):
            raise ValueError(f"FixedTimes holds {len(self.times)} workers, asked for {n_workers}")
        t = np.array(self.times)
        return t.copy() if size is None else np.tile(t, (size, 1))


@dataclass(frozen=True)
class OrderStatSummary:
    """``t_mean[n-1] = E[T_(n)]`` and ``t_harmonic[n-1] = 1 / E[1 / T_(n)]``."""

    t_mean: np.ndarray
    t_harmonic: np.ndarray


def sample_draw(dist, n_workers: int, rng) -> np.ndarray:
    """One realization of the N workers' cycle times (unsorted)."""
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    return dist.sample(np.random.default_rng(rng), n_workers)


def harmonic_numbers(n: int) -> np.ndarray:
    """``H_0, ..., H_n`` with ``H_0 = 0``."""
    return np.concatenate(([0.0], np.cumsum(1.0 / np.arange(1, n + 1))))


def order_stat_means(dist: ShiftedExponential, n_workers: int) -> np.ndarray:
    """``E[T_(n)] = (H_N - H_{N-n}) / mu + t0`` for n = 1..N (Renyi)."""
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    H = harmonic_numbers(n_workers)
    n = np.arange(1, n_workers + 1)
    return (H[n_workers] - H[n_workers - n]) / dist.mu + dist.t0


def _scaled_e1(z: float) -> float:
    """``exp(z) * E1(z)`` for z > 0, without overflow for large z."""
    if z <= _SERIES_CUTOFF:
        # E1(z) = -gamma - ln z - sum_{k>=1} (-z)^k / (k k!)
        term = 1.0
        acc = 0.0
        k = 0
        while True:
            k += 1
            term *= -z / k
            contrib = term / k
            acc += contrib
            if abs(contrib) < 1e-17 * abs(acc):
                break
        return math.exp(z) * (-EULER_GAMMA - math.log(z) - acc)
    # Modified Lentz evaluation of the continued fraction for exp(z) E1(z).
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"continued fraction for E1({z}) did not converge")


def exponential_integral(x: float) -> float:
    """Ei(x) for x < 0, i.e. ``-E1(-x)``.

    Power series for |x| <= 6, continued fraction beyond. Relative
    accuracy is better than 1e-11 across the negative axis.
    """
    x = float(x)
    if not x < 0:
        raise ValueError(f"exponential_integral is defined here only for x < 0, got {x}")
    z = -x
    # exp(-z) underflows to 0 past z ~ 745, which is the correct limit.
    return -math.exp(-z) * _scaled_e1(z)


def _require_shift(dist: ShiftedExponential) -> None:
    if not dist.t0 > 0:
        raise ValueError(
            "harmonic-mean order statistics need t0 > 0: E[1/T_(n)] involves Ei(0), which diverges"
        )


def harmonic_means_formula(dist: ShiftedExponential, n_workers: int) -> np.ndarray:
    """``1 / E[1 / T_(n)]`` through the alternating exponential-integral sum.

    The sum cancels catastrophically as N grows (binomial weights up to
    2^(N-1)); it is kept as a cross-check for moderate N.
    """
    _require_shift(dist)
    N = n_workers
    a = dist.mu * dist.t0
    out = np.empty(N)
    for n in range(1, N + 1):
        # exp(ap) Ei(-ap) = -exp(ap) E1(ap), so the sign flips out of the sum.
        s = math.fsum(
            (-1) ** i * math.comb(n - 1, i) * _scaled_e1(a * (N - n + 1 + i)) for i in range(n)
        )
        out[n - 1] = 1.0 / (dist.mu * (N + 1 - n) * math.comb(N, n - 1) * s)
    return out


def _inverse_moment_quad(N: int, n: int, a: float) -> float:
    # X = exp(-mu (T - t0)) maps T_(n) to a Beta(N-n+1, n) variable and
    # 1/T to mu / (a - log X).
    p, q = N - n + 1, n
    log_norm = special.gammaln(N + 1) - special.gammaln(p) - special.gammaln(q)

    def integrand(x):
        # QUADPACK never evaluates the endpoints exactly.
        return math.exp(log_norm + (p - 1) * math.log(x) + (q - 1) * math.log1p(-x)) / (a - math.log(x))

    mode = (p - 1) / (N - 1) if N > 1 else 0.5
    pts = [m for m in (mode,) if 0.0 < m < 1.0]
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=pts or None, epsabs=0.0, epsrel=1e-12, limit=500)
    return val


def harmonic_means_quadrature(dist: ShiftedExponential, n_workers: int) -> np.ndarray:
    """``1 / E[1 / T_(n)]`` by adaptive quadrature over the order-statistic density."""
    _require_shift(dist)
    a = dist.mu * dist.t0
    inv = np.array([_inverse_moment_quad(n_workers, n, a) for n in range(1, n_workers + 1)])
    return 1.0 / (dist.mu * inv)


def order_stat_harmonic_means(
    dist: ShiftedExponential, n_workers: int, method: str = "quadrature"
) -> np.ndarray:
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    if method == "quadrature":
        return harmonic_means_quadrature(dist, n_workers)
    if method == "formula":
        return harmonic_means_formula(dist, n_workers)
    raise ValueError(f"unknown method {method!r}; expected 'quadrature' or 'formula'")


def monte_carlo_order_stats(dist, n_workers: int, n_draws: int, rng, chunk: int = 100_000) -> OrderStatSummary:
    """Sample estimates of E[T_(n)] and 1/E[1/T_(n)] for any samplable distribution."""
    rng = np.random.default_rng(rng)
    s1 = np.zeros(n_workers)
    s_inv = np.zeros(n_workers)
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        d = np.sort(dist.sample(rng, n_workers, k), axis=1)
        s1 += d.sum(axis=0)
        s_inv += (1.0 / d).sum(axis=0)
        done += k
    return OrderStatSummary(t_mean=s1 / n_draws, t_harmonic=n_draws / s_inv)


def summarize(dist, n_workers: int, rng=None, n_draws: int = 200_000) -> OrderStatSummary:
    """Order-statistic summary, analytic where available and Monte Carlo otherwise."""
    if isinstance(dist, ShiftedExponential):
        t = order_stat_means(dist, n_workers)
        if dist.t0 > 0:
            return OrderStatSummary(t, order_stat_harmonic_means(dist, n_workers))
        # With t0 = 0, E[1/T_(1)] diverges.
        return OrderStatSummary(t, np.full(n_workers, np.nan))
    if isinstance(dist, FixedTimes):
        t = np.sort(np.array(dist.times))
        return OrderStatSummary(t, t.copy())
    return monte_carlo_order_stats(dist, n_workers, n_draws, rng)
