"""Closed-form leakage analysis for two-ad campaigns.

The engagement output of a campaign is summarized by the sub-distribution

    R_b(x) = D_b(x) * (1 + alpha_t * delta_x) / 2 * alpha_e * close(ad_1, x),

the probability that a user drawn from D_b has features x, is shown ad_1
and converts on it. Hellinger distance between R_0 and R_1 brackets the
campaign size needed to tell D_0 from D_1, and the ratio of those sizes
under two targeting accuracies gives the campaign expansion factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateInstanceError, ModelError, UndefinedBoundsError
from .feature_space import as_distribution, closeness_to_all, hellinger_squared, outcome_matrix

GAMMA = 4.0 / math.log(1.5)
DEFAULT_BETA = 1.0 / 6.0


@dataclass(frozen=True)
class EngagementOutputDistribution:
    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if np.any(m < 0) or np.any(m > 1):
            raise ModelError("sub-distribution masses must lie in [0, 1]")
        if m.sum() > 1 + 1e-9:
            raise ModelError(f"total mass {m.sum()!r} exceeds 1")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def dimension(self) -> int:
        return self.masses.size.bit_length() - 1

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def as_array(self) -> np.ndarray:
        return self.masses


def _pair_terms(d, active_ads: Sequence, rho=None):
    if len(active_ads) != 2:
        raise ConfigurationError(f"analysis needs exactly two active ads, got {len(active_ads)}")
    dist = as_distribution(d)
    ell = dist.dimension
    (aud1, ad1), (aud2, _) = active_ads
    if rho is not None and rho.mask:
        # closeness is evaluated on the filtered features
        filtered = outcome_matrix(ell).copy()
        filtered[:, list(rho.mask)] = 0
        a1 = np.asarray(aud1.as_array())
        a2 = np.asarray(aud2.as_array())
        delta = (filtered != a2).mean(axis=1) - (filtered != a1).mean(axis=1)
    else:
        delta = closeness_to_all(aud1, ell) - closeness_to_all(aud2, ell)
    return dist, delta, closeness_to_all(ad1, ell)


def engagement_output_distribution(d, active_ads: Sequence, params) -> EngagementOutputDistribution:
    """R_b for distribution ``d``; ``params`` needs ``alpha_t`` and ``alpha_e``."""
    dist, delta, close1 = _pair_terms(d, active_ads, getattr(params, "rho", None))
    masses = dist.pmf * (1.0 + params.alpha_t * delta) / 2.0 * (params.alpha_e * close1)
    return EngagementOutputDistribution(masses)


@dataclass(frozen=True)
class BoundsReport:
    h_squared: float
    sc_lower: float
    sc_upper: float
    sc_private_upper: Optional[float]
    beta: float
    epsilon: Optional[float] = None


def sc_bounds(r0, r1, beta: float = DEFAULT_BETA, epsilon: Optional[float] = None) -> BoundsReport:
    """Hellinger sample-complexity bracket ln(1/(4 beta)) / (4 H^2) < SC < 1 / H^2.

    With ``epsilon`` the private upper bound 10 * SC_upper / epsilon is filled in.
    """
    if not 0.0 < beta < 0.25:
        raise ConfigurationError("beta must lie in (0, 1/4)")
    h2 = hellinger_squared(r0, r1)
    if h2 <= 0.0:
        raise UndefinedBoundsError("H^2 = 0: the distributions cannot be distinguished")
    upper = 1.0 / h2
    lower = math.log(1.0 / (4.0 * beta)) / (4.0 * h2)
    private = sc_private_bound(upper, epsilon) if epsilon is not None else None
    return BoundsReport(h2, lower, upper, private, beta, epsilon)


def sc_private_bound(sc_upper: float, epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise ConfigurationError(f"the private bound holds only for 0 < epsilon < 1, got {epsilon!r}")
    return 10.0 * sc_upper / epsilon


@dataclass(frozen=True)
class ExpansionReport:
    A: float
    B: float
    K: float
    gamma: float
    z: float
    n_private_predicted: Optional[int] = None


def expansion_terms(d0, d1, active_ads: Sequence) -> tuple:
    """(A, B) with A = sum close(ad_1,x) (sqrt D0 - sqrt D1)^2 and B the same weighted by delta_x."""
    dist0, delta, close1 = _pair_terms(d0, active_ads)
    dist1 = as_distribution(d1)
    if dist1.dimension != dist0.dimension:
        raise ConfigurationError("D0 and D1 must share ell")
    sq = (np.sqrt(dist0.pmf) - np.sqrt(dist1.pmf)) ** 2
    return float((close1 * sq).sum()), float((close1 * delta * sq).sum())


def expansion_from_k(K: float, alpha_t: float, alpha_t_prime: float) -> float:
    return GAMMA * (1.0 + alpha_t * K) / (1.0 + alpha_t_prime * K)


def expansion_factor(d0, d1, active_ads: Sequence, alpha_t: float, alpha_t_prime: float,
                     n_nonprivate: Optional[int] = None, epsilon: Optional[float] = None) -> ExpansionReport:
    """z = gamma (1 + alpha_t K) / (1 + alpha_t' K), K = B / A.

    When ``n_nonprivate`` and ``epsilon`` are given, also predicts the
    amplified private campaign size ceil(10 z n / epsilon).
    """
    A, B = expansion_terms(d0, d1, active_ads)
    if A <= 0.0:
        raise DegenerateInstanceError("A = 0: D0 and D1 agree wherever ad_1 has positive closeness")
    K = B / A
    z = expansion_from_k(K, alpha_t, alpha_t_prime)
    n_pred = None
    if n_nonprivate is not None and epsilon is not None:
        if epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        n_pred = int(math.ceil(10.0 * z * n_nonprivate / epsilon))
    return ExpansionReport(A, B, K, GAMMA, z, n_pred)


def advantage_degradation(nonprivate_advantage):
    """Advantage kept after switching to DP reporting: 8/10 of the input.

    Exact for ``Fraction`` inputs.
    """
    if not 0 <= nonprivate_advantage <= 1:
        raise ConfigurationError("advantage must lie in [0, 1]")
    if isinstance(nonprivate_advantage, Fraction):
        return nonprivate_advantage * Fraction(8, 10)
    return nonprivate_advantage * 8 / 10


def expected_ad1_count(d, active_ads: Sequence, params, n_users: int, rounds_per_user: int = 1) -> float:
    """Expected identity-report count for ad_1: users * rounds * total mass of R_b."""
    return n_users * rounds_per_user * engagement_output_distribution(d, active_ads, params).total_mass
