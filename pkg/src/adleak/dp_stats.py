"""Noise mechanisms and the hypothesis tests used by the distinguisher.

Tulap noise is built as ``G1 - G2 + U`` with G1, G2 geometric on {0, 1, ...}
(success probability 1 - b) and U uniform on (-1/2, 1/2). Adding it to a
sensitivity-1 count is (-log b)-DP, and the binomial test that integrates
the Tulap CDF against the null binomial PMF is the uniformly most powerful
DP test of a binomial proportion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.stats import binom

from .errors import ConfigurationError

SIDES = ("upper", "lower", "two-sided")


@dataclass(frozen=True)
class TulapParams:
    b: float
    q: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ConfigurationError(f"Tulap b must lie in (0, 1), got {self.b!r}")
        if self.q != 0.0:
            raise ConfigurationError("only pure DP (q = 0) is supported")

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "TulapParams":
        if epsilon is None or epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {epsilon!r}")
        return cls(b=math.exp(-epsilon))

    @property
    def epsilon(self) -> float:
        return -math.log(self.b)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    level: float


def _geometric(u, b):
    # P(G >= k) = b**k; u in (0, 1]
    return np.floor(np.log(u) / np.log(b))


def tulap_sample(params: TulapParams, rng: np.random.Generator, size=None):
    """Draw Tulap noise. Uses three uniforms per draw, so draws at different
    ``b`` from the same stream are coupled (larger b, larger |noise|)."""
    shape = (3,) if size is None else (3,) + tuple(np.atleast_1d(size))
    u = 1.0 - rng.random(shape)
    g1 = _geometric(u[0], params.b)
    g2 = _geometric(u[1], params.b)
    out = g1 - g2 + (u[2] - 0.5)
    return float(out) if size is None else out


def tulap_cdf(params: TulapParams, t):
    """Closed-form CDF of Tulap(b, q=0) noise; vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    b = params.b
    neg = -np.abs(t)
    r = np.round(neg)
    f_neg = b ** (-r) / (1.0 + b) * (b + (neg - r + 0.5) * (1.0 - b))
    out = np.where(t <= 0, f_neg, 1.0 - f_neg)
    return float(out) if out.ndim == 0 else out


def _check_side(side):
    if side not in SIDES:
        raise ConfigurationError(f"side must be one of {SIDES}, got {side!r}")


def binomial_pvalues(k, n: int, null_p: float, side: str = "upper") -> np.ndarray:
    """Exact tail-sum p-values for an array of success counts."""
    _check_side(side)
    k = np.asarray(k)
    upper = binom.sf(k - 1, n, null_p)
    lower = binom.cdf(k, n, null_p)
    if side == "upper":
        p = upper
    elif side == "lower":
        p = lower
    else:
        p = np.minimum(1.0, 2.0 * np.minimum(upper, lower))
    return np.clip(p, 0.0, 1.0)


def binomial_test_exact(k: int, n: int, null_p: float, side: str = "upper", level: float = 0.05) -> TestResult:
    """Exact binomial test of ``k`` successes in ``n`` trials against ``null_p``.

    The two-sided p-value doubles the smaller tail (capped at 1).
    """
    if not (isinstance(k, (int, np.integer)) and isinstance(n, (int, np.integer))):
        raise ConfigurationError("k and n must be integers")
    if not 0 <= k <= n:
        raise ConfigurationError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < null_p < 1.0:
        raise ConfigurationError(f"null_p must lie in (0, 1), got {null_p!r}")
    p = float(binomial_pvalues(k, n, null_p, side))
    return TestResult(statistic=float(k), p_value=p, reject=p <= level, level=level)


def _window(params: TulapParams) -> int:
    # b**m below 1e-17 relative to the mass we keep
    return max(2, int(math.ceil(40.0 / params.epsilon)) + 2)


def ump_pvalues(z, n: int, null_p: float, params: TulapParams, side: str = "upper") -> np.ndarray:
    """UMP DP p-values for Tulap-noised binomial counts ``z``; vectorized.

    upper: sum_x Binom(x; n, p0) * P(x + T >= z), lower mirrors it. Only a
    window of x around z is summed explicitly; outside it the Tulap CDF is
    0 or 1 to within 1e-17 and binomial tails are used instead.
    """
    _check_side(side)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    m = _window(params)
    base = np.floor(z)
    offsets = np.arange(-m, m + 1)
    xs = base[:, None] + offsets[None, :]
    valid = (xs >= 0) & (xs <= n)
    pmf = np.where(valid, binom.pmf(np.clip(xs, 0, n), n, null_p), 0.0)
    # P(x + T >= z) = F(x - z) by symmetry
    upper = binom.sf(base + m, n, null_p) + (pmf * tulap_cdf(params, xs - z[:, None])).sum(axis=1)
    lower = binom.cdf(base - m - 1, n, null_p) + (pmf * tulap_cdf(params, z[:, None] - xs)).sum(axis=1)
    if side == "upper":
        p = upper
    elif side == "lower":
        p = lower
    else:
        p = np.minimum(1.0, 2.0 * np.minimum(upper, lower))
    return np.clip(p, 0.0, 1.0)


def ump_dp_binomial_test(noisy_count: float, n: int, null_p: float, params: TulapParams,
                         side: str = "upper", level: float = 0.05) -> TestResult:
    if n < 0:
        raise ConfigurationError("n must be non-negative")
    if not 0.0 < null_p < 1.0:
        raise ConfigurationError(f"null_p must lie in (0, 1), got {null_p!r}")
    p = float(ump_pvalues(noisy_count, n, null_p, params, side)[0])
    return TestResult(statistic=float(noisy_count), p_value=p, reject=p <= level, level=level)


def geometric_mechanism(count: int, epsilon: float, rng: np.random.Generator) -> int:
    """Release ``count + Z`` with P(Z = z) proportional to exp(-epsilon |z|)."""
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    b = math.exp(-epsilon)
    u = 1.0 - rng.random(2)
    return int(count + _geometric(u[0], b) - _geometric(u[1], b))


def geometric_pmf(z, epsilon: float):
    """Closed-form P(Z = z) of two-sided geometric noise."""
    b = math.exp(-epsilon)
    return (1.0 - b) / (1.0 + b) * b ** np.abs(np.asarray(z))


def estimate_metrics_alpha(f_r: Callable, f_s: Callable, score_dataset, trials: int,
                           rng: np.random.Generator) -> tuple:
    """Monte-Carlo estimate of |P[f_s(d) = 1] - P[f_s(f_r(d)) = 1]|.

    ``f_r(d, rng)`` and ``f_s(d, rng)`` may be randomized. Returns
    ``(estimate, half_width)`` where half_width is three standard errors of
    the difference of the two proportions.
    """
    if trials < 1000:
        raise ConfigurationError("use at least 1000 trials")
    raw = sum(bool(f_s(score_dataset, rng)) for _ in range(trials)) / trials
    released = sum(bool(f_s(f_r(score_dataset, rng), rng)) for _ in range(trials)) / trials
    se = math.sqrt((raw * (1 - raw) + released * (1 - released)) / trials)
    return abs(raw - released), 3.0 * se


def kolmogorov_distance(samples: Iterable[float], cdf: Callable) -> float:
    """sup_t |empirical CDF - cdf| evaluated at the sample points."""
    x = np.sort(np.asarray(list(samples), dtype=float))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    hi = np.arange(1, n + 1) / n - f
    lo = f - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))
