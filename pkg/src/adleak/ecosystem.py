"""The five ideal functionalities composed into one state machine.

Society samples features just in time, User holds per-user browsing
histories with targeting/engagement/attribution cursors, Targeting keeps
the active campaigns, Engagement drives browsing and conversions, and
Metrics keeps cumulative ad scores and produces reports.

Operations that the functionalities answer with ``fail`` return the
``FAIL`` sentinel and leave the state untouched.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .behaviors import ParameterizingFunctions
from .errors import ConfigurationError, DimensionError, UsageError
from .feature_space import CorrelatedBernoulliSpec, ExplicitDistribution, FeatureVector, as_distribution, sample


class _Fail:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "FAIL"

    def __bool__(self):
        return False


FAIL = _Fail()
OK = "ok"


@dataclass
class BrowsingEntry:
    site: object
    ad: Optional[FeatureVector] = None
    conversion: Optional[object] = None


@dataclass
class UserRecord:
    user_id: int
    features: Optional[FeatureVector] = None
    browsing_history: list = field(default_factory=list)
    targeting_idx: int = 0
    engagement_idx: int = 0
    attribution_idx: int = 0


@dataclass(frozen=True)
class Campaign:
    audience: FeatureVector
    ads: tuple

    def __post_init__(self):
        ads = tuple(self.ads)
        if not ads:
            raise ConfigurationError("a campaign needs at least one ad")
        ell = len(self.audience)
        if any(len(ad) != ell for ad in ads):
            raise DimensionError("campaign ads and audience must share ell")
        object.__setattr__(self, "ads", ads)

    @property
    def dimension(self) -> int:
        return len(self.audience)


@dataclass(frozen=True)
class SocietyConfig:
    n: int
    dist: Union[ExplicitDistribution, CorrelatedBernoulliSpec]

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("society needs at least one user")


class Ecosystem:
    """Society + User + Targeting + Engagement + Metrics for one run.

    One instance is single-threaded mutable state; every random choice is
    drawn from ``rng`` in call order.
    """

    def __init__(self, society: SocietyConfig, functions: ParameterizingFunctions, rng: np.random.Generator):
        self.n = society.n
        self.dist = as_distribution(society.dist)
        self.ell = self.dist.dimension
        self.functions = functions
        self.rng = rng
        self.users: dict = {}
        self.active_campaigns: list = []
        self.ad_scores: defaultdict = defaultdict(float)

    # Targeting ---------------------------------------------------------
    def register_campaign(self, campaign: Campaign):
        if campaign.dimension != self.ell:
            raise DimensionError(f"campaign has ell={campaign.dimension}, ecosystem has {self.ell}")
        self.active_campaigns.append(campaign)
        return OK

    @property
    def active_ads(self) -> list:
        return [(c.audience, ad) for c in self.active_campaigns for ad in c.ads]

    # Society / User ----------------------------------------------------
    def _user(self, user_id: int, create: bool = False) -> Optional[UserRecord]:
        if not 0 <= user_id < self.n:
            raise UsageError(f"user {user_id} outside 0..{self.n - 1}")
        rec = self.users.get(user_id)
        if rec is None and create:
            rec = self.users[user_id] = UserRecord(user_id)
        return rec

    def _init_features(self, rec: UserRecord):
        if rec.features is None:
            rec.features = sample(self.dist, self.rng)
            rec.targeting_idx = rec.engagement_idx = rec.attribution_idx = 0

    # Engagement --------------------------------------------------------
    def browse(self, user_id: int):
        rec = self._user(user_id, create=True)
        self._init_features(rec)
        site = self.functions.f_b(rec.features, tuple(rec.browsing_history), self.rng)
        rec.browsing_history.append(BrowsingEntry(site))
        return site

    def target_ad(self, user_id: int):
        rec = self._user(user_id)
        if rec is None or rec.targeting_idx >= len(rec.browsing_history):
            return FAIL
        if not self.active_campaigns:
            return FAIL
        site = rec.browsing_history[-1].site
        if rec.browsing_history[rec.targeting_idx].site != site:
            return FAIL
        features_prime = self.functions.rho(rec.features)
        ad = self.functions.f_t(self.active_ads, features_prime, site, self.rng)
        rec.browsing_history[rec.targeting_idx] = BrowsingEntry(site, ad)
        rec.targeting_idx += 1
        return ad

    def engage(self, user_id: int):
        rec = self._user(user_id)
        if rec is None or rec.engagement_idx >= rec.targeting_idx:
            return FAIL
        entry = rec.browsing_history[rec.engagement_idx]
        conversion = self.functions.f_e(rec.features, entry.site, entry.ad, self.rng)
        rec.browsing_history[rec.engagement_idx] = BrowsingEntry(entry.site, entry.ad, conversion)
        rec.engagement_idx += 1
        return conversion

    # Metrics -----------------------------------------------------------
    def attribute(self, user_id: int):
        """Attribute the next unattributed conversion of ``user_id``.

        The slice handed to f_a runs from the attribution cursor up to and
        including the converting entry.
        """
        rec = self._user(user_id)
        if rec is None:
            return FAIL
        j = rec.attribution_idx
        hit = next(
            (k for k in range(j, rec.engagement_idx) if rec.browsing_history[k].conversion is not None),
            None,
        )
        if hit is None:
            return FAIL
        for ad, score in self.functions.f_a(rec.browsing_history[j:hit + 1]):
            self.ad_scores[ad] += score
        rec.attribution_idx = hit + 1
        return OK

    def attribute_all(self, user_id: int) -> int:
        count = 0
        while self.attribute(user_id) is OK:
            count += 1
        return count

    def generate_report(self, campaign: Campaign) -> dict:
        if campaign not in self.active_campaigns:
            raise UsageError("report requested for an unregistered campaign")
        restricted = {ad: self.ad_scores.get(ad, 0.0) for ad in campaign.ads}
        return self.functions.f_r(restricted, self.rng)

    # Helpers -----------------------------------------------------------
    def run_round(self, user_id: int):
        """One browse -> target -> engage round for a user."""
        self.browse(user_id)
        self.target_ad(user_id)
        return self.engage(user_id)

    def snapshot(self) -> dict:
        """Plain-data copy of the full state, for replay comparisons."""
        users = {
            uid: (
                str(rec.features),
                tuple((e.site, None if e.ad is None else str(e.ad), e.conversion) for e in rec.browsing_history),
                rec.targeting_idx, rec.engagement_idx, rec.attribution_idx,
            )
            for uid, rec in sorted(self.users.items())
        }
        scores = {str(ad): s for ad, s in sorted(self.ad_scores.items(), key=lambda kv: str(kv[0]))}
        return {"users": users, "scores": scores, "campaigns": len(self.active_campaigns)}
