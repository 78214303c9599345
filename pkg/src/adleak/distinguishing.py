"""The distinguishing game played against an advertising ecosystem.

A challenger flips ``b``, runs a campaign with users drawn from ``D_b``
and hands the adversary the campaign report. The adversary runs a
one-sided test of ad_1's attributed count against the null rate implied by
``D_0`` and guesses ``b = 1`` when the test rejects.

Three arms are supported:

* ``baseline`` -- the adversary sees the b_test bits of ``n`` users directly.
* ``ecosystem`` with identity reporting -- exact binomial test.
* ``ecosystem`` with DP reporting -- UMP test on the Tulap-noised count.

Campaigns run either through the full :class:`~adleak.ecosystem.Ecosystem`
state machine or through an aggregated sampler that draws the same report
distribution cell by cell (users per feature vector, then conversions per
cell); the aggregated path is what makes large-n searches affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import dp_stats
from .analysis import engagement_output_distribution
from .behaviors import BehaviorParams, make_functions
from .ecosystem import Campaign, Ecosystem, SocietyConfig
from .errors import CeilingError, ConfigurationError, DimensionError, UndefinedSampleComplexityError
from .feature_space import (
    FeatureVector,
    as_distribution,
    closeness_to_all,
    outcome_matrix,
    total_variation,
)

ARMS = ("baseline", "ecosystem")
BACKENDS = ("ecosystem", "aggregate")


@dataclass(frozen=True)
class ABTest:
    """Two ads differing only in ``test_bit``.

    Each ad is registered as its own campaign whose audience is the ad
    vector itself, so targeting sees two (audience, ad) pairs whose
    closeness to a user differs by +-1/ell depending on the user's test bit.
    """

    ad_a: FeatureVector
    ad_b: FeatureVector
    test_bit: int

    def __post_init__(self):
        if len(self.ad_a) != len(self.ad_b):
            raise DimensionError("A/B ads must share ell")
        diff = [i for i, (x, y) in enumerate(zip(self.ad_a.bits, self.ad_b.bits)) if x != y]
        if diff != [self.test_bit]:
            raise ConfigurationError(f"ads must differ exactly in bit {self.test_bit}, differ in {diff}")

    @classmethod
    def build(cls, ell: int, test_bit: int, base: Optional[FeatureVector] = None) -> "ABTest":
        base = base if base is not None else FeatureVector.zeros(ell)
        if len(base) != ell or not 0 <= test_bit < ell:
            raise DimensionError("bad base vector or test bit")
        return cls(base.with_bit(test_bit, 1), base.with_bit(test_bit, 0), test_bit)

    @property
    def dimension(self) -> int:
        return len(self.ad_a)

    @property
    def campaigns(self) -> tuple:
        return (Campaign(self.ad_a, (self.ad_a,)), Campaign(self.ad_b, (self.ad_b,)))

    @property
    def active_ads(self) -> list:
        return [(c.audience, ad) for c in self.campaigns for ad in c.ads]


@dataclass(frozen=True)
class GameConfig:
    n: int
    d0: object
    d1: object
    ab: ABTest
    behavior: BehaviorParams = field(default_factory=BehaviorParams)
    rounds_per_user: int = 1
    level: float = 0.05
    master_seed: int = 0
    arm: str = "ecosystem"
    side: str = "auto"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("campaign size n must be at least 1")
        if self.rounds_per_user < 1:
            raise ConfigurationError("rounds_per_user must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise ConfigurationError("level must lie in (0, 1)")
        if self.arm not in ARMS:
            raise ConfigurationError(f"arm must be one of {ARMS}")
        if self.side not in ("auto", "upper", "lower"):
            raise ConfigurationError("side must be auto, upper or lower")
        if self.dist0.dimension != self.dist1.dimension or self.dist0.dimension != self.ab.dimension:
            raise DimensionError("D0, D1 and the campaign must share ell")

    @property
    def ell(self) -> int:
        return self.ab.dimension

    @cached_property
    def dist0(self):
        return as_distribution(self.d0)

    @cached_property
    def dist1(self):
        return as_distribution(self.d1)

    def dist(self, b: int):
        return self.dist1 if b else self.dist0

    @property
    def private(self) -> bool:
        return self.arm == "ecosystem" and self.behavior.private

    @cached_property
    def tulap(self) -> Optional[dp_stats.TulapParams]:
        return dp_stats.TulapParams.from_epsilon(self.behavior.epsilon) if self.private else None

    @cached_property
    def cell_probabilities(self) -> tuple:
        """(P(shown ad_A and converts | x), P(shown ad_B and converts | x)) per outcome x."""
        ell = self.ell
        x = outcome_matrix(ell)
        if self.behavior.rho.mask:
            x = x.copy()
            x[:, list(self.behavior.rho.mask)] = 0
        close_a = 1.0 - (x != self.ab.ad_a.as_array()).mean(axis=1)
        close_b = 1.0 - (x != self.ab.ad_b.as_array()).mean(axis=1)
        show_a = (1.0 + self.behavior.alpha_t * (close_a - close_b)) / 2.0
        p_a = show_a * self.behavior.alpha_e * closeness_to_all(self.ab.ad_a, ell)
        p_b = (1.0 - show_a) * self.behavior.alpha_e * closeness_to_all(self.ab.ad_b, ell)
        return p_a, p_b

    def success_rate(self, b: int) -> float:
        """Per-trial success probability of the adversary's statistic under D_b."""
        d = self.dist(b)
        if self.arm == "baseline":
            return float(d.marginals()[self.ab.test_bit])
        return engagement_output_distribution(d, self.ab.active_ads, self.behavior).total_mass

    @property
    def null_rate(self) -> float:
        return self.success_rate(0)

    @property
    def test_side(self) -> str:
        if self.side != "auto":
            return self.side
        return "upper" if self.success_rate(1) >= self.success_rate(0) else "lower"

    @property
    def trials_per_run(self) -> int:
        return self.n if self.arm == "baseline" else self.n * self.rounds_per_user

    def with_n(self, n: int) -> "GameConfig":
        return replace(self, n=n)


@dataclass(frozen=True)
class AdvantageEstimate:
    advantage: float
    trials: int
    half_width_3sigma: float


@dataclass(frozen=True)
class SCResult:
    minimal_n: int
    power_at_n: float
    level: float
    target_power: float
    search_trace: list


# Running one campaign ------------------------------------------------------

def run_exec(config: GameConfig, b: int, rng: np.random.Generator, backend: str = "ecosystem") -> dict:
    """Run the campaign with users from D_b and return the report {ad: score}."""
    if config.arm != "ecosystem":
        raise ConfigurationError("run_exec applies to ecosystem arms; the baseline has no report")
    if backend == "ecosystem":
        eco = _build_ecosystem(config, b, rng)
        for uid in range(config.n):
            for _ in range(config.rounds_per_user):
                eco.run_round(uid)
        for uid in range(config.n):
            eco.attribute_all(uid)
        report = {}
        for campaign in config.ab.campaigns:
            report.update(eco.generate_report(campaign))
        return report
    if backend == "aggregate":
        a, bb = _aggregate_counts(config, b, rng, 1)
        scores = {config.ab.ad_a: float(a[0]), config.ab.ad_b: float(bb[0])}
        if config.private:
            return {ad: s + dp_stats.tulap_sample(config.tulap, rng) for ad, s in scores.items()}
        return scores
    raise ConfigurationError(f"backend must be one of {BACKENDS}")


def run_exec_raw(config: GameConfig, b: int, rng: np.random.Generator) -> list:
    """Engagement output only: every user's browsing history, with no metrics step."""
    eco = _build_ecosystem(config, b, rng)
    for uid in range(config.n):
        for _ in range(config.rounds_per_user):
            eco.run_round(uid)
    return [list(eco.users[uid].browsing_history) for uid in range(config.n)]


def _build_ecosystem(config: GameConfig, b: int, rng) -> Ecosystem:
    eco = Ecosystem(SocietyConfig(config.n, config.dist(b)), make_functions(config.behavior), rng)
    for campaign in config.ab.campaigns:
        eco.register_campaign(campaign)
    return eco


def _aggregate_counts(config: GameConfig, b: int, rng: np.random.Generator, trials: int) -> tuple:
    pmf = config.dist(b).pmf
    users = rng.multinomial(config.n, pmf, size=trials)
    impressions = users * config.rounds_per_user
    p_a, p_b = config.cell_probabilities
    conv_a = rng.binomial(impressions, p_a)
    rest = np.where(p_a < 1.0, p_b / np.where(p_a < 1.0, 1.0 - p_a, 1.0), 0.0)
    conv_b = rng.binomial(impressions - conv_a, np.clip(rest, 0.0, 1.0))
    return conv_a.sum(axis=1), conv_b.sum(axis=1)


def simulate_statistics(config: GameConfig, b: int, rng: np.random.Generator, trials: int) -> np.ndarray:
    """The adversary's observed statistic for ``trials`` independent runs (aggregated sampler)."""
    if config.arm == "baseline":
        return rng.binomial(config.n, config.success_rate(b), size=trials).astype(float)
    counts, _ = _aggregate_counts(config, b, rng, trials)
    counts = counts.astype(float)
    if config.private:
        counts = counts + dp_stats.tulap_sample(config.tulap, rng, trials)
    return counts


# The adversary ---------------------------------------------------------------

def p_values(config: GameConfig, statistics) -> np.ndarray:
    stats = np.asarray(statistics, dtype=float)
    n_trials = config.trials_per_run
    if config.private:
        return dp_stats.ump_pvalues(stats, n_trials, config.null_rate, config.tulap, config.test_side)
    k = np.clip(np.round(stats), 0, n_trials).astype(np.int64)
    return dp_stats.binomial_pvalues(k, n_trials, config.null_rate, config.test_side)


def adversary_guess(config: GameConfig, statistic: float) -> int:
    return int(p_values(config, [statistic])[0] <= config.level)


def report_statistic(config: GameConfig, report: dict) -> float:
    return float(report[config.ab.ad_a])


def raw_statistic(config: GameConfig, histories: list) -> float:
    """Post-process raw engagement output exactly as Metrics would (last touch, identity)."""
    from .behaviors import attribution_last_touch

    total = 0.0
    for history in histories:
        start = 0
        for k, entry in enumerate(history):
            if entry.conversion is not None:
                for ad, score in attribution_last_touch(history[start:k + 1]):
                    if ad == config.ab.ad_a:
                        total += score
                start = k + 1
    return total


def run_trial(config: GameConfig, rng: np.random.Generator, backend: str = "aggregate", raw: bool = False) -> bool:
    """One round of the game; True when the adversary's guess equals b."""
    b = int(rng.integers(2))
    if config.arm == "baseline":
        stat = float(simulate_statistics(config, b, rng, 1)[0])
    elif raw:
        stat = raw_statistic(config, run_exec_raw(config, b, rng))
    else:
        stat = report_statistic(config, run_exec(config, b, rng, backend))
    return adversary_guess(config, stat) == b


def trial_rng(master_seed: int, trial_index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(stream), int(trial_index)])


def estimate_advantage(config: GameConfig, trials: int, stream: int = 0, backend: str = "aggregate",
                       raw: bool = False) -> AdvantageEstimate:
    """advantage = 2 * P(correct) - 1 over ``trials`` independent games.

    Trial ``t`` uses the stream derived from (master_seed, stream, t), so
    results do not depend on how trials are scheduled.
    """
    if trials < 100:
        raise ConfigurationError("use at least 100 trials")
    correct = sum(
        run_trial(config, trial_rng(config.master_seed, t, stream), backend=backend, raw=raw) for t in range(trials)
    )
    frac = correct / trials
    half = 3.0 * 2.0 * math.sqrt(frac * (1.0 - frac) / trials)
    return AdvantageEstimate(2.0 * frac - 1.0, trials, half)


# Sample complexity -----------------------------------------------------------

def power_at(config: GameConfig, n: int, trials: int, stream: int = 0) -> float:
    """Fraction of b = 1 runs of size ``n`` in which the test rejects.

    The random stream depends only on (master_seed, stream, n), so arms that
    share a stream are evaluated on common random numbers.
    """
    cfg = config.with_n(n)
    rng = np.random.default_rng([int(config.master_seed), int(stream), int(n)])
    stats = simulate_statistics(cfg, 1, rng, trials)
    return float(np.mean(p_values(cfg, stats) <= cfg.level))


def find_sample_complexity(config: GameConfig, target_power: float = 0.8, trials_per_point: int = 400,
                           stream: int = 0, start: int = 16, ceiling: int = 10**7) -> SCResult:
    """Smallest n whose estimated power reaches ``target_power``.

    Doubles n from ``start`` until the power target is met, then binary
    searches the last bracket. ``search_trace`` lists every (n, power)
    evaluated, in evaluation order.
    """
    if not 0.5 < target_power < 1.0:
        raise ConfigurationError("target_power must lie in (0.5, 1)")
    if total_variation(config.dist0, config.dist1) <= 1e-6:
        raise UndefinedSampleComplexityError("D0 and D1 coincide; no campaign size distinguishes them")

    trace = []
    cache = {}

    def power(n):
        if n not in cache:
            cache[n] = power_at(config, n, trials_per_point, stream)
            trace.append((n, cache[n]))
        return cache[n]

    lo, hi = 0, min(start, ceiling)
    while power(hi) < target_power:
        if hi >= ceiling:
            raise CeilingError(f"power {target_power} not reached at n = {ceiling}", trace)
        lo, hi = hi, min(hi * 2, ceiling)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power(mid) >= target_power:
            hi = mid
        else:
            lo = mid
    return SCResult(hi, cache[hi], config.level, target_power, trace)
