import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adleak.behaviors import CONVERTED, BehaviorParams, make_functions
from adleak.ecosystem import FAIL, OK, BrowsingEntry, Campaign, Ecosystem, SocietyConfig
from adleak.errors import ConfigurationError, DimensionError, UsageError
from adleak.feature_space import ExplicitDistribution, FeatureVector

V = FeatureVector.from_string


def eco(dist=None, n=3, seed=0, **params):
    dist = dist or ExplicitDistribution.uniform(3)
    return Ecosystem(SocietyConfig(n, dist), make_functions(BehaviorParams(**params)), np.random.default_rng(seed))


AB = (Campaign(V("100"), (V("100"),)), Campaign(V("000"), (V("000"),)))


def test_register_campaign():
    e = eco()
    assert e.register_campaign(Campaign(V("101"), (V("101"), V("001")))) == OK
    assert len(e.active_ads) == 2
    e.register_campaign(Campaign(V("101"), (V("101"), V("001"))))
    assert len(e.active_ads) == 4
    with pytest.raises(ConfigurationError):
        Campaign(V("101"), ())
    with pytest.raises(DimensionError):
        e.register_campaign(Campaign(V("10"), (V("10"),)))


def test_browse_lazily_samples_features():
    e = eco()
    assert 0 not in e.users
    e.browse(0)
    feats = e.users[0].features
    assert feats is not None and len(e.users[0].browsing_history) == 1
    e.browse(0)
    assert e.users[0].features == feats and len(e.users[0].browsing_history) == 2
    assert {entry.site for entry in e.users[0].browsing_history} == {"site_0"}
    with pytest.raises(UsageError):
        e.browse(3)


def test_target_ad_and_fail_paths():
    e = eco()
    e.register_campaign(Campaign(V("101"), (V("101"),)))
    assert e.target_ad(0) is FAIL
    assert 0 not in e.users  # fail does not create state
    e.browse(0)
    assert e.target_ad(0) == V("101")
    rec = e.users[0]
    assert rec.targeting_idx == 1 and rec.browsing_history[0].ad == V("101")
    before = e.snapshot()
    assert e.target_ad(0) is FAIL
    assert e.snapshot() == before


def test_target_without_campaigns_fails():
    e = eco()
    e.browse(0)
    before = e.snapshot()
    assert e.target_ad(0) is FAIL
    assert e.snapshot() == before


def test_engage_examples():
    x = V("110")
    e = eco(ExplicitDistribution.point_mass(x), alpha_e=1.0)
    e.register_campaign(Campaign(x, (x,)))
    e.browse(0)
    e.target_ad(0)
    assert e.engage(0) == CONVERTED
    before = e.snapshot()
    assert e.engage(0) is FAIL
    assert e.snapshot() == before
    z = eco(ExplicitDistribution.point_mass(x), alpha_e=0.0)
    z.register_campaign(Campaign(x, (x,)))
    for _ in range(20):
        z.run_round(0)
    assert all(entry.conversion is None for entry in z.users[0].browsing_history)


def test_attribute_and_report():
    x = V("110")
    e = eco(ExplicitDistribution.point_mass(x), alpha_e=1.0)
    c = Campaign(x, (x, V("000")))
    e.register_campaign(Campaign(x, (x,)))
    e.register_campaign(c)
    assert e.attribute(0) is FAIL
    e.run_round(0)
    e.run_round(0)
    assert e.attribute(0) is OK
    assert e.users[0].attribution_idx == 1
    assert e.attribute(0) is OK
    assert e.users[0].attribution_idx == 2
    before = e.snapshot()
    assert e.attribute(0) is FAIL
    assert e.snapshot() == before
    report = e.generate_report(c)
    assert report[V("000")] == 0.0
    assert report[x] >= 0.0
    with pytest.raises(UsageError):
        e.generate_report(Campaign(V("111"), (V("111"),)))


def test_report_counts_conversions_on_ad1_only():
    # every user converts on the single ad shown; report = {ad_1: k, ad_2: 0}
    x = V("110")
    e = eco(ExplicitDistribution.point_mass(x), n=5, alpha_e=1.0)
    c = Campaign(x, (x, V("001")))
    e.register_campaign(Campaign(x, (x,)))
    for uid in range(5):
        e.run_round(uid)
        e.attribute_all(uid)
    e.register_campaign(c)
    assert e.generate_report(c) == {x: 5.0, V("001"): 0.0}


def test_no_conversions_gives_zero_report():
    e = eco(alpha_e=0.0)
    for c in AB:
        e.register_campaign(c)
    for uid in range(3):
        e.run_round(uid)
        assert e.attribute_all(uid) == 0
    assert e.generate_report(AB[0]) == {V("100"): 0.0}


def test_dp_report_deterministic():
    reports = []
    for _ in range(2):
        e = eco(seed=4, alpha_e=0.5, epsilon=0.5)
        for c in AB:
            e.register_campaign(c)
        for uid in range(3):
            e.run_round(uid)
            e.attribute_all(uid)
        reports.append(e.generate_report(AB[0]))
    assert reports[0] == reports[1]


OPS = st.lists(st.tuples(st.sampled_from(["browse", "target", "engage", "attribute"]), st.integers(0, 2)),
               max_size=60)


def _apply(ops, seed):
    e = eco(seed=seed, alpha_e=0.6, alpha_t=0.8)
    for c in AB:
        e.register_campaign(c)
    features = {}
    for op, uid in ops:
        {"browse": e.browse, "target": e.target_ad, "engage": e.engage, "attribute": e.attribute}[op](uid)
        rec = e.users.get(uid)
        if rec is not None:
            features.setdefault(uid, rec.features)
            assert rec.features == features[uid]
        for r in e.users.values():
            assert 0 <= r.attribution_idx <= r.engagement_idx <= r.targeting_idx <= len(r.browsing_history)
            assert all(entry.ad is not None for entry in r.browsing_history[:r.targeting_idx])
    return e


@settings(max_examples=60, deadline=None)
@given(OPS, st.integers(0, 5))
def test_invariants_under_random_schedules(ops, seed):
    e = _apply(ops, seed)
    attributed = 0
    for r in e.users.values():
        attributed += sum(1 for entry in r.browsing_history[:r.attribution_idx] if entry.conversion is not None)
    total = sum(e.generate_report(c)[c.ads[0]] for c in AB)
    assert total == attributed
    assert e.snapshot() == _apply(ops, seed).snapshot()
