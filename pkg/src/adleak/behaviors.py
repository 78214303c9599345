"""Concrete parameterizing functions for the ecosystem.

Each function takes the caller's ``numpy.random.Generator`` and consumes a
fixed number of draws per call so that schedules replay bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dp_stats
from .errors import ConfigurationError
from .feature_space import FeatureVector, closeness

CONVERTED = "converted"
DEFAULT_SITE = "site_0"


@dataclass(frozen=True)
class Rho:
    """Deterministic targeting filter: zeroes the masked bit positions."""

    mask: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "mask", tuple(sorted(int(i) for i in self.mask)))

    @property
    def is_identity(self) -> bool:
        return not self.mask

    def __call__(self, features: FeatureVector) -> FeatureVector:
        return rho_apply(self, features)


IDENTITY = Rho()


@dataclass(frozen=True)
class BehaviorParams:
    alpha_t: float = 1.0
    alpha_e: float = 0.05
    alpha_a: float = 1.0
    epsilon: Optional[float] = None
    rho: Rho = field(default=IDENTITY)

    def __post_init__(self):
        for name in ("alpha_t", "alpha_e", "alpha_a"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v!r}")
        if self.epsilon is not None and not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not isinstance(self.rho, Rho):
            object.__setattr__(self, "rho", Rho(tuple(self.rho)))

    @property
    def private(self) -> bool:
        return self.epsilon is not None


def rho_apply(rho: Rho, features: FeatureVector) -> FeatureVector:
    if rho.is_identity:
        return features
    bits = list(features.bits)
    for i in rho.mask:
        if i < len(bits):
            bits[i] = 0
    return FeatureVector(tuple(bits))


def prob_first_ad(alpha_t: float, active_ads: Sequence, features: FeatureVector) -> float:
    """P(ad_1 chosen) = (1 + alpha_t * delta) / 2 for a two-entry active-ads list."""
    (aud1, _), (aud2, _) = active_ads
    delta = closeness(aud1, features) - closeness(aud2, features)
    return (1.0 + alpha_t * delta) / 2.0


def targeting_pairwise(params: BehaviorParams, active_ads: Sequence, features_prime: FeatureVector,
                       site, rng: np.random.Generator) -> FeatureVector:
    """Pick between exactly two (audience, ad) pairs so that
    P(ad_1) - P(ad_2) = alpha_t * (close(aud_1, x) - close(aud_2, x)).

    Any other number of active ads gets a uniform choice; the utility
    guarantee does not apply then.
    """
    u = rng.random()
    if len(active_ads) == 2:
        p1 = prob_first_ad(params.alpha_t, active_ads, features_prime)
        return active_ads[0][1] if u < p1 else active_ads[1][1]
    if not active_ads:
        raise ConfigurationError("no active ads to choose from")
    return active_ads[min(int(u * len(active_ads)), len(active_ads) - 1)][1]


def browsing_constant(features, history, rng=None):
    return DEFAULT_SITE


def conversion_probability(params: BehaviorParams, features: FeatureVector, ad: FeatureVector) -> float:
    return params.alpha_e * closeness(ad, features)


def engagement_bernoulli(params: BehaviorParams, features: FeatureVector, site, ad: FeatureVector,
                         rng: np.random.Generator):
    """Convert with probability alpha_e * close(ad, features), else None."""
    u = rng.random()
    return CONVERTED if u < conversion_probability(params, features, ad) else None


def attribution_last_touch(history_slice) -> list:
    """Give all credit to the most recent impression carrying a conversion."""
    for entry in reversed(list(history_slice)):
        if entry.conversion is not None and entry.ad is not None:
            return [(entry.ad, 1.0)]
    return []


def reporting_identity(scores, rng=None) -> dict:
    return dict(scores)


def reporting_dp(params: BehaviorParams, scores, rng: np.random.Generator, *, epsilon: float | None = None) -> dict:
    """Add independent Tulap(e^-epsilon) noise to every ad's score.

    ``epsilon`` overrides ``params.epsilon`` (used to probe the large-epsilon
    limit, outside the (0, 1) range the params accept).
    """
    eps = params.epsilon if epsilon is None else epsilon
    if eps is None:
        raise ConfigurationError("DP reporting needs an epsilon")
    tp = dp_stats.TulapParams.from_epsilon(eps)
    return {ad: float(score) + dp_stats.tulap_sample(tp, rng) for ad, score in scores.items()}


@dataclass(frozen=True)
class ParameterizingFunctions:
    """The six functions an ecosystem is parameterized by."""

    rho: Callable
    f_t: Callable
    f_b: Callable
    f_e: Callable
    f_a: Callable
    f_r: Callable


def make_functions(params: BehaviorParams) -> ParameterizingFunctions:
    """Standard instantiation: pairwise targeting, single site, Bernoulli
    engagement, last-touch attribution, identity or Tulap reporting."""
    if params.private:
        f_r = lambda scores, rng: reporting_dp(params, scores, rng)  # noqa: E731
    else:
        f_r = reporting_identity
    return ParameterizingFunctions(
        rho=lambda features: rho_apply(params.rho, features),
        f_t=lambda active_ads, features_prime, site, rng: targeting_pairwise(params, active_ads, features_prime, site, rng),
        f_b=browsing_constant,
        f_e=lambda features, site, ad, rng: engagement_bernoulli(params, features, site, ad, rng),
        f_a=attribution_last_touch,
        f_r=f_r,
    )
