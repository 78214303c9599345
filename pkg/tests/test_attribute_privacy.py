import itertools
import math

import numpy as np
import pytest
from conftest import default_ab, default_null_spec, game
from scipy.stats import binom

from adleak.attribute_privacy import (
    ConstantMechanism,
    DataGenerator,
    GeometricMechanism,
    IdentityReportMechanism,
    PufferfishFramework,
    SensitivitySpec,
    TulapReportMechanism,
    conditional_output,
    count_statistic,
    enumerate_datasets,
    expected_conversion_statistic,
    miniature,
    pufferfish_verify,
    recheck_witness,
    sensitivity,
    sensitivity_estimate,
    threshold_secret,
    violation_witness,
)
from adleak.behaviors import BehaviorParams
from adleak.distinguishing import ABTest
from adleak.errors import CapacityError, ConfigurationError, InfeasibleSecretError
from adleak.feature_space import (
    CorrelatedBernoulliSpec,
    ExplicitDistribution,
    FeatureVector,
    closeness,
    derive_alternate,
    equicorrelation,
)

V = FeatureVector.from_string
NONPRIV = BehaviorParams(alpha_t=1.0, alpha_e=0.05)


def all_none(n, ell=1, dist=None):
    dist = dist or ExplicitDistribution.uniform(ell)
    return PufferfishFramework((threshold_secret(0, 1, 1), threshold_secret(0, 0, 0)), ((0, 1),),
                               (DataGenerator(dist, n),))


def test_framework_validation():
    s = threshold_secret(0, 0, 0.5)
    with pytest.raises(ConfigurationError):
        PufferfishFramework((s,), ((0, 0),), (DataGenerator(ExplicitDistribution.uniform(1), 2),))
    with pytest.raises(ConfigurationError):
        threshold_secret(0, 0.6, 0.5)
    with pytest.raises(CapacityError):
        enumerate_datasets(DataGenerator(ExplicitDistribution.uniform(3), 6))


def test_enumeration_probabilities_sum_to_one():
    theta = DataGenerator(ExplicitDistribution(np.array([0.1, 0.2, 0.3, 0.4])), 3)
    bits, probs = enumerate_datasets(theta)
    assert bits.shape == (64, 3, 2)
    assert probs.sum() == pytest.approx(1.0)


def test_sensitivity_all_vs_none():
    assert sensitivity(SensitivitySpec(count_statistic(0), 0), all_none(10)) == 10.0
    assert sensitivity(SensitivitySpec(lambda bits: np.full(bits.shape[0], 3.0), 0), all_none(10)) == 0.0


def test_sensitivity_monte_carlo_matches_binomial_oracle():
    # n = 20 records, one bit: E[count | count <= 10] vs E[count | count > 10]
    n = 20
    fw = PufferfishFramework((threshold_secret(0, 0, 0.5), threshold_secret(0, 0.55, 1)), ((0, 1),),
                             (DataGenerator(ExplicitDistribution([0.6, 0.4]), n),))
    k = np.arange(n + 1)
    w = binom.pmf(k, n, 0.4)
    lo = (k[:11] * w[:11]).sum() / w[:11].sum()
    hi = (k[11:] * w[11:]).sum() / w[11:].sum()
    est = sensitivity_estimate(SensitivitySpec(count_statistic(0), 0), fw, np.random.default_rng(0))
    assert est.method == "monte-carlo"
    assert abs(est.value - (hi - lo)) <= est.half_width
    with pytest.raises(ConfigurationError):
        sensitivity(SensitivitySpec(count_statistic(0), 0), fw)


def test_sensitivity_of_conversion_count_matches_brute_force():
    spec = CorrelatedBernoulliSpec((0.5, 0.3, 0.6), equicorrelation(3, 0.3))
    ab = ABTest.build(3, 0, V("111"))
    params = BehaviorParams(alpha_t=1.0, alpha_e=0.4)
    mini = miniature(spec, derive_alternate(spec, 0, 0.8), ab, params, n=4)
    got = sensitivity(SensitivitySpec(expected_conversion_statistic(mini.ab, params), 0), mini.framework)

    def expected_count(records):
        total = 0.0
        for x in records:
            delta = closeness(mini.ab.ad_a, x) - closeness(mini.ab.ad_b, x)
            total += (1 + delta) / 2 * 0.4 * closeness(mini.ab.ad_a, x)
        return total

    best = 0.0
    for theta in mini.framework.thetas:
        sums = {0: [0.0, 0.0], 1: [0.0, 0.0]}
        for idx in itertools.product(range(8), repeat=4):
            records = [FeatureVector.from_index(i, 3) for i in idx]
            p = math.prod(theta.dist.prob(r) for r in records)
            g = sum(r[0] for r in records) / 4
            s = 0 if g <= 0.65 else 1  # midpoint of 0.5 and 0.8
            sums[s][0] += p
            sums[s][1] += p * expected_count(records)
        best = max(best, abs(sums[0][1] / sums[0][0] - sums[1][1] / sums[1][0]))
    assert got == pytest.approx(best, rel=1e-10)
    assert 0.0 <= got <= 4.0


def test_infeasible_secret():
    fw = PufferfishFramework((threshold_secret(0, 1, 1), threshold_secret(0, 0, 0)), ((0, 1),),
                             (DataGenerator(ExplicitDistribution([1.0, 0.0]), 3),))
    with pytest.raises(InfeasibleSecretError):
        sensitivity(SensitivitySpec(count_statistic(0), 0), fw)
    with pytest.raises(InfeasibleSecretError):
        pufferfish_verify(ConstantMechanism(), fw, 1.0)


def identity_oracle(ab, params, records):
    """P((count_A, count_B)) by enumerating each record's (A, B, none) outcome."""
    out = {}
    per = []
    for x in records:
        delta = closeness(ab.ad_a, x) - closeness(ab.ad_b, x)
        pa = (1 + params.alpha_t * delta) / 2 * params.alpha_e * closeness(ab.ad_a, x)
        pb = (1 - params.alpha_t * delta) / 2 * params.alpha_e * closeness(ab.ad_b, x)
        per.append((pa, pb, 1 - pa - pb))
    for outcome in itertools.product(range(3), repeat=len(records)):
        p = math.prod(per[i][o] for i, o in enumerate(outcome))
        key = (outcome.count(0), outcome.count(1))
        out[key] = out.get(key, 0.0) + p
    return out


def conditional_oracle(framework, ab, params, theta_index, secret_name, output):
    theta = framework.thetas[theta_index]
    secret = {s.name: s for s in framework.secrets}[secret_name]
    num = den = 0.0
    ell = theta.ell
    for idx in itertools.product(range(2**ell), repeat=theta.n):
        records = [FeatureVector.from_index(i, ell) for i in idx]
        bits = np.array([[r.bits for r in records]])
        if not secret(bits)[0]:
            continue
        p = math.prod(theta.dist.prob(r) for r in records)
        den += p
        num += p * identity_oracle(ab, params, records).get(output, 0.0)
    return num / den


def test_miniature_identity_violates_and_witness_rechecks():
    spec0 = default_null_spec()
    mini = miniature(spec0, derive_alternate(spec0, 0, 0.8), default_ab(), NONPRIV, n=4)
    assert mini.keep == (0, 1, 2)
    mech = IdentityReportMechanism(mini.ab, NONPRIV)
    v = pufferfish_verify(mech, mini.framework, 1.0)
    assert v.violated
    w = v.witness
    pa = conditional_oracle(mini.framework, mini.ab, NONPRIV, w.theta_index, w.secret_a, w.output)
    pb = conditional_oracle(mini.framework, mini.ab, NONPRIV, w.theta_index, w.secret_b, w.output)
    assert pa == pytest.approx(w.p_a, rel=1e-9) and pb == pytest.approx(w.p_b, rel=1e-9)
    assert not math.exp(-1.0) <= pa / pb <= math.exp(1.0)
    assert recheck_witness(mech, mini.framework, w) == pytest.approx(w.ratio, rel=1e-9)
    assert v.to_dict()["witness"]["ratio"] == pytest.approx(w.ratio)


def test_constant_mechanism_always_satisfied():
    spec0 = default_null_spec()
    mini = miniature(spec0, derive_alternate(spec0, 0, 0.8), default_ab(), NONPRIV, n=4)
    for eps in [0.0, 0.1, 1.0, 5.0]:
        assert pufferfish_verify(ConstantMechanism(), mini.framework, eps).status == "satisfied"


def test_two_record_toy_violates_at_small_epsilon():
    # b_test and conversions correlated through closeness; two records
    d = ExplicitDistribution(np.array([0.4, 0.1, 0.1, 0.4]))
    ab = ABTest.build(2, 0, V("01"))
    params = BehaviorParams(alpha_t=1.0, alpha_e=0.9)
    fw = PufferfishFramework((threshold_secret(0, 0, 0.5), threshold_secret(0, 0.75, 1)), ((0, 1),),
                             (DataGenerator(d, 2),))
    v = pufferfish_verify(IdentityReportMechanism(ab, params), fw, 0.1)
    assert v.violated
    pa = conditional_oracle(fw, ab, params, 0, v.witness.secret_a, v.witness.output)
    pb = conditional_oracle(fw, ab, params, 0, v.witness.secret_b, v.witness.output)
    assert pa / pb == pytest.approx(v.witness.ratio, rel=1e-9)


def test_geometric_mechanism_verdicts_and_monotonicity():
    # count over 2 one-bit records; secrets g <= 1/2 vs g = 1, so the count gap is at most 2
    fw = PufferfishFramework((threshold_secret(0, 0, 0.5), threshold_secret(0, 1, 1)), ((0, 1),),
                             (DataGenerator(ExplicitDistribution([0.5, 0.5]), 2),))
    mech = GeometricMechanism(count_statistic(0), epsilon=0.5)
    verdicts = [pufferfish_verify(mech, fw, eps) for eps in (0.2, 0.6, 1.0, 2.0)]
    assert verdicts[0].violated
    assert not verdicts[-1].violated
    seen_ok = False
    for v in verdicts:
        seen_ok |= not v.violated
        if seen_ok:
            assert not v.violated
    loud = GeometricMechanism(count_statistic(0), epsilon=5.0)
    assert pufferfish_verify(loud, fw, 1.0).violated


def test_tulap_mechanism_grid_is_a_distribution():
    spec0 = default_null_spec()
    mini = miniature(spec0, derive_alternate(spec0, 0, 0.8), default_ab(), NONPRIV, n=4)
    priv = BehaviorParams(alpha_t=0.5, alpha_e=0.05, epsilon=0.5)
    mech = TulapReportMechanism(mini.ab, priv, 0.5)
    outs, probs = conditional_output(mech, mini.framework.secrets[0], mini.framework.thetas[0])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(probs >= 0)
    bits, _ = enumerate_datasets(mini.framework.thetas[0])
    single = mech.output_probability(bits[:3], outs[100])
    _, table = mech.output_table(bits[:3])
    np.testing.assert_allclose(single, table[:, 100], rtol=1e-12)


def test_violation_witness_null_inconclusive():
    ev = violation_witness(game(0.5, NONPRIV, n=5000), 500)
    assert ev.status == "inconclusive"
    assert not ev.found


def test_violation_witness_consistent_with_miniature():
    cfg = game(0.8, NONPRIV, n=20_000)
    ev = violation_witness(cfg, 500)
    assert ev.found and ev.attribute == 0
    mini = miniature(cfg.d0, cfg.d1, cfg.ab, NONPRIV)
    assert pufferfish_verify(IdentityReportMechanism(mini.ab, NONPRIV), mini.framework, 1.0).violated
