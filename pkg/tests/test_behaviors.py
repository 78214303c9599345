import numpy as np
import pytest

from adleak.behaviors import (
    CONVERTED,
    DEFAULT_SITE,
    BehaviorParams,
    Rho,
    attribution_last_touch,
    browsing_constant,
    conversion_probability,
    engagement_bernoulli,
    prob_first_ad,
    reporting_dp,
    reporting_identity,
    rho_apply,
    targeting_pairwise,
)
from adleak.ecosystem import BrowsingEntry
from adleak.errors import ConfigurationError
from adleak.feature_space import FeatureVector, closeness

V = FeatureVector.from_string


def test_params_validation():
    with pytest.raises(ConfigurationError):
        BehaviorParams(alpha_e=1.5)
    with pytest.raises(ConfigurationError):
        BehaviorParams(epsilon=1.0)
    with pytest.raises(ConfigurationError):
        BehaviorParams(epsilon=0.0)
    assert BehaviorParams(epsilon=0.5).private
    assert not BehaviorParams().private


def test_rho():
    x = V("1011")
    assert rho_apply(Rho(), x) == x
    assert rho_apply(Rho((0, 1, 2, 3)), x) == V("0000")
    assert rho_apply(Rho((2,)), x) == V("1001")


def _pair(aud1, aud2):
    return [(V(aud1), V(aud1)), (V(aud2), V(aud2))]


def test_prob_first_ad_examples():
    ads = _pair("1000", "0000")
    x = V("1000")  # Delta = 1 - 0.75 = 0.25
    assert prob_first_ad(1.0, ads, x) == 0.625
    assert prob_first_ad(0.0, ads, x) == 0.5
    assert prob_first_ad(1.0, ads, V("0111")) == pytest.approx(0.375)
    assert prob_first_ad(1.0, _pair("1010", "1010"), x) == 0.5


def test_targeting_utility_holds_over_all_x():
    # estimated P(ad_1|x) - P(ad_2|x) = alpha_t * Delta_x within 3 sigma for every x
    ell, alpha_t, trials = 4, 0.7, 4000
    params = BehaviorParams(alpha_t=alpha_t)
    ads = _pair("1100", "0100")
    rng = np.random.default_rng(5)
    for k in range(2**ell):
        x = FeatureVector.from_index(k, ell)
        hits = sum(targeting_pairwise(params, ads, x, DEFAULT_SITE, rng) == ads[0][1] for _ in range(trials))
        diff = 2 * hits / trials - 1
        delta = closeness(ads[0][0], x) - closeness(ads[1][0], x)
        p = (1 + alpha_t * delta) / 2
        assert abs(diff - alpha_t * delta) <= 3 * 2 * np.sqrt(p * (1 - p) / trials) + 1e-12


def test_targeting_fallback_uniform():
    params = BehaviorParams()
    ads = [(V("10"), V("10")), (V("01"), V("01")), (V("11"), V("11"))]
    rng = np.random.default_rng(0)
    picks = [targeting_pairwise(params, ads, V("00"), DEFAULT_SITE, rng) for _ in range(3000)]
    for _, ad in ads:
        assert abs(picks.count(ad) / 3000 - 1 / 3) < 0.03
    assert targeting_pairwise(params, ads[:1], V("00"), DEFAULT_SITE, rng) == ads[0][1]


def test_browsing_constant():
    assert browsing_constant(V("1"), ()) == DEFAULT_SITE
    assert browsing_constant(V("0"), (BrowsingEntry("x"),)) == DEFAULT_SITE


def test_engagement_examples():
    rng = np.random.default_rng(1)
    x = V("1010")
    assert all(engagement_bernoulli(BehaviorParams(alpha_e=0.0), x, DEFAULT_SITE, x, rng) is None for _ in range(100))
    assert all(engagement_bernoulli(BehaviorParams(alpha_e=1.0), x, DEFAULT_SITE, x, rng) == CONVERTED
               for _ in range(100))


def test_engagement_rate_monte_carlo():
    # alpha_e = 0.05, closeness 0.8 -> 0.04
    params = BehaviorParams(alpha_e=0.05)
    x, ad = V("11111"), V("11110")
    assert conversion_probability(params, x, ad) == pytest.approx(0.04)
    rng = np.random.default_rng(2)
    n = 1_000_000
    rate = sum(engagement_bernoulli(params, x, DEFAULT_SITE, ad, rng) is not None for _ in range(n)) / n
    assert abs(rate - 0.04) <= 3 * np.sqrt(0.04 * 0.96 / n)


def test_engagement_utility_difference():
    params = BehaviorParams(alpha_e=0.3)
    x = V("1100")
    ad1, ad2 = V("1100"), V("0011")
    rng = np.random.default_rng(3)
    n = 50_000
    c1 = sum(engagement_bernoulli(params, x, DEFAULT_SITE, ad1, rng) is not None for _ in range(n)) / n
    c2 = sum(engagement_bernoulli(params, x, DEFAULT_SITE, ad2, rng) is not None for _ in range(n)) / n
    expected = 0.3 * (closeness(ad1, x) - closeness(ad2, x))
    assert abs((c1 - c2) - expected) <= 3 * np.sqrt((c1 * (1 - c1) + c2 * (1 - c2)) / n)


def test_last_touch():
    a1, a2 = V("10"), V("01")
    assert attribution_last_touch([BrowsingEntry("s", a1, CONVERTED)]) == [(a1, 1.0)]
    assert attribution_last_touch([BrowsingEntry("s", a2, None), BrowsingEntry("s", a1, CONVERTED)]) == [(a1, 1.0)]
    assert attribution_last_touch([BrowsingEntry("s", a2, None)]) == []


def test_reporting_identity():
    for scores in ({}, {V("1"): 3.0}, {V("1"): 0.0, V("0"): 7.0}):
        assert reporting_identity(scores) == scores


def test_reporting_dp():
    params = BehaviorParams(epsilon=0.5)
    scores = {V("1"): 50.0, V("0"): 3.0}
    a = reporting_dp(params, scores, np.random.default_rng(7))
    b = reporting_dp(params, scores, np.random.default_rng(7))
    assert a == b
    big = reporting_dp(params, scores, np.random.default_rng(8), epsilon=60.0)
    assert all(abs(big[k] - scores[k]) <= 0.5 for k in scores)
    with pytest.raises(ConfigurationError):
        reporting_dp(BehaviorParams(), scores, np.random.default_rng(0))


def test_reporting_dp_mean():
    params = BehaviorParams(epsilon=0.5)
    rng = np.random.default_rng(11)
    vals = np.array([reporting_dp(params, {V("1"): 50.0}, rng)[V("1")] for _ in range(100_000)])
    assert abs(vals.mean() - 50.0) < 0.1
