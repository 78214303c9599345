"""Pufferfish verification and attribute-privacy violation detection.

Datasets are ``n`` i.i.d. records from a record distribution ``D`` over
{0,1}^ell. Secrets are threshold events on the fraction ``g`` of records
carrying a sensitive attribute. On small instances (n * ell <= 16) every
dataset is enumerated, so conditional output distributions and the
Pufferfish ratio bound are checked exactly.

Arrays of datasets are passed around as ``bits`` of shape (N, n, ell).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dp_stats
from .behaviors import BehaviorParams
from .errors import CapacityError, ConfigurationError, DimensionError, InfeasibleSecretError
from .feature_space import ExplicitDistribution, FeatureVector, as_distribution, outcome_matrix

MAX_ENUM_BITS = 16
MC_ACCEPT_FLOOR = 100_000
RATIO_RTOL = 1e-9


# Secrets and frameworks ------------------------------------------------------

def attribute_fraction(bits: np.ndarray, attribute: int) -> np.ndarray:
    """g_i: fraction of records in each dataset with attribute i set."""
    return bits[:, :, attribute].mean(axis=1)


@dataclass(frozen=True)
class SecretPredicate:
    name: str
    test: Callable = field(compare=False)

    def __call__(self, bits: np.ndarray) -> np.ndarray:
        return np.asarray(self.test(bits), dtype=bool)


def threshold_secret(attribute: int, lo: float = 0.0, hi: float = 1.0, g: Callable = attribute_fraction) -> SecretPredicate:
    """The event lo <= g_i(X) <= hi."""
    if lo > hi:
        raise ConfigurationError("empty threshold interval")
    return SecretPredicate(f"{lo:g} <= g_{attribute} <= {hi:g}", lambda bits: (g(bits, attribute) >= lo - 1e-12)
                           & (g(bits, attribute) <= hi + 1e-12))


@dataclass(frozen=True)
class DataGenerator:
    """theta: ``n`` records drawn i.i.d. from ``dist``."""

    dist: ExplicitDistribution
    n: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dist", as_distribution(self.dist))
        if self.n < 1:
            raise ConfigurationError("a dataset needs at least one record")

    @property
    def ell(self) -> int:
        return self.dist.dimension

    @property
    def enumerable(self) -> bool:
        return self.n * self.ell <= MAX_ENUM_BITS


@dataclass(frozen=True)
class PufferfishFramework:
    secrets: tuple
    secret_pairs: tuple
    thetas: tuple

    def __post_init__(self):
        object.__setattr__(self, "secrets", tuple(self.secrets))
        object.__setattr__(self, "thetas", tuple(self.thetas))
        object.__setattr__(self, "secret_pairs", tuple(tuple(p) for p in self.secret_pairs))
        if not self.thetas or not self.secret_pairs:
            raise ConfigurationError("a framework needs at least one theta and one secret pair")
        for a, b in self.secret_pairs:
            if not (0 <= a < len(self.secrets) and 0 <= b < len(self.secrets)):
                raise ConfigurationError("secret pair refers to an unknown secret")
            if a == b:
                raise ConfigurationError("the two secrets of a pair must differ")
        ells = {t.ell for t in self.thetas}
        if len(ells) != 1:
            raise DimensionError("all thetas must share ell")

    @property
    def ell(self) -> int:
        return self.thetas[0].ell


def enumerate_datasets(theta: DataGenerator) -> tuple:
    """All datasets of ``theta`` with their probabilities: (bits (N, n, ell), probs (N,))."""
    if not theta.enumerable:
        raise CapacityError(f"n * ell = {theta.n * theta.ell} exceeds {MAX_ENUM_BITS}; not enumerable")
    size = 1 << theta.ell
    records = np.indices((size,) * theta.n).reshape(theta.n, -1).T
    probs = theta.dist.pmf[records].prod(axis=1)
    return outcome_matrix(theta.ell)[records], probs


# Mechanisms ------------------------------------------------------------------

class Mechanism:
    """A randomized map from datasets to a finite (or gridded) output set.

    Subclasses implement ``output_table(bits) -> (outputs, P)`` with
    ``P[k, w]`` the probability of output ``outputs[w]`` on dataset ``k``.
    ``conditional`` mixes those rows with given dataset weights.
    """

    def output_table(self, bits: np.ndarray) -> tuple:
        raise NotImplementedError

    def conditional(self, bits: np.ndarray, weights: np.ndarray) -> tuple:
        outputs, table = self.output_table(bits)
        return outputs, (weights / weights.sum()) @ table

    def output_probability(self, bits: np.ndarray, output) -> np.ndarray:
        """P(M(X) = output) for every dataset in ``bits``."""
        outputs, table = self.output_table(bits)
        if output not in outputs:
            return np.zeros(bits.shape[0])
        return table[:, outputs.index(output)]


@dataclass(frozen=True)
class ConstantMechanism(Mechanism):
    value: object = 0

    def output_table(self, bits):
        return [self.value], np.ones((bits.shape[0], 1))


def _per_record_conversion(ab, behavior: BehaviorParams, bits: np.ndarray) -> tuple:
    """P(ad_A converts), P(ad_B converts) for every record, from the pairwise targeting rule."""
    ell = bits.shape[-1]
    x = bits.copy()
    if behavior.rho.mask:
        x[..., list(behavior.rho.mask)] = 0
    a = ab.ad_a.as_array()
    b = ab.ad_b.as_array()
    delta = (x != b).mean(axis=-1) - (x != a).mean(axis=-1)
    show_a = (1.0 + behavior.alpha_t * delta) / 2.0
    p_a = show_a * behavior.alpha_e * (1.0 - (bits != a).sum(axis=-1) / ell)
    p_b = (1.0 - show_a) * behavior.alpha_e * (1.0 - (bits != b).sum(axis=-1) / ell)
    return p_a, p_b


@dataclass(frozen=True)
class IdentityReportMechanism(Mechanism):
    """The exact identity report (count_A, count_B) of a one-round A/B campaign."""

    ab: object
    behavior: BehaviorParams

    def output_table(self, bits):
        n_data, n = bits.shape[:2]
        p_a, p_b = _per_record_conversion(self.ab, self.behavior, bits)
        dp = np.zeros((n_data, n + 1, n + 1))
        dp[:, 0, 0] = 1.0
        for r in range(n):
            pa = p_a[:, r, None, None]
            pb = p_b[:, r, None, None]
            nxt = dp * (1.0 - pa - pb)
            nxt[:, 1:, :] += dp[:, :-1, :] * pa
            nxt[:, :, 1:] += dp[:, :, :-1] * pb
            dp = nxt
        outputs = [(a, b) for a in range(n + 1) for b in range(n + 1) if a + b <= n]
        table = np.stack([dp[:, a, b] for a, b in outputs], axis=1)
        return outputs, table


@dataclass(frozen=True)
class GeometricMechanism(Mechanism):
    """F(X) + Z with two-sided geometric Z; outputs truncated to min F - radius .. max F + radius."""

    statistic: Callable = field(compare=False)
    epsilon: float = 1.0
    radius: int = 50

    def output_table(self, bits):
        f = np.rint(np.asarray(self.statistic(bits), dtype=float)).astype(int)
        outputs = list(range(int(f.min()) - self.radius, int(f.max()) + self.radius + 1))
        grid = np.asarray(outputs)
        return outputs, dp_stats.geometric_pmf(grid[None, :] - f[:, None], self.epsilon)

    def output_probability(self, bits, output):
        f = np.rint(np.asarray(self.statistic(bits), dtype=float)).astype(int)
        return dp_stats.geometric_pmf(int(output) - f, self.epsilon)


@dataclass(frozen=True)
class TulapReportMechanism(Mechanism):
    """Identity report plus independent Tulap noise per ad, gridded.

    Each noisy coordinate is bucketed into width-``bucket`` cells on
    [-radius, n + radius] plus two overflow cells, an approximation of the
    continuous output space.
    """

    ab: object
    behavior: BehaviorParams
    epsilon: float
    bucket: float = 0.25
    radius: float = 20.0

    def _edges(self, n: int) -> np.ndarray:
        inner = np.arange(-self.radius, n + self.radius + self.bucket / 2, self.bucket)
        return np.concatenate([[-np.inf], inner, [np.inf]])

    def _coordinate_table(self, n: int) -> np.ndarray:
        # [count, bucket] = P(count + T falls in bucket)
        params = dp_stats.TulapParams.from_epsilon(self.epsilon)
        edges = self._edges(n)
        counts = np.arange(n + 1)[:, None]
        cdf = dp_stats.tulap_cdf(params, np.clip(edges[None, :] - counts, -1e6, 1e6))
        return np.diff(cdf, axis=1)

    def output_table(self, bits):
        outputs, table = IdentityReportMechanism(self.ab, self.behavior).output_table(bits)
        return self._noisy(bits.shape[1], outputs, table)

    def conditional(self, bits, weights):
        outputs, probs = IdentityReportMechanism(self.ab, self.behavior).conditional(bits, weights)
        out, table = self._noisy(bits.shape[1], outputs, probs[None, :])
        return out, table[0]

    def output_probability(self, bits, output):
        outputs, table = IdentityReportMechanism(self.ab, self.behavior).output_table(bits)
        coord = self._coordinate_table(bits.shape[1])
        i, j = output
        return sum(table[:, w] * coord[a, i] * coord[b, j] for w, (a, b) in enumerate(outputs))

    def _noisy(self, n, outputs, table):
        coord = self._coordinate_table(n)
        n_buckets = coord.shape[1]
        noisy = np.zeros((table.shape[0], n_buckets * n_buckets))
        for w, (a, b) in enumerate(outputs):
            noisy += table[:, w, None] * np.outer(coord[a], coord[b]).ravel()[None, :]
        labels = [(i, j) for i in range(n_buckets) for j in range(n_buckets)]
        return labels, noisy


# Sensitivity -----------------------------------------------------------------

@dataclass(frozen=True)
class SensitivitySpec:
    statistic: Callable = field(compare=False)
    attribute: int = 0
    g: Callable = field(default=attribute_fraction, compare=False)


def count_statistic(attribute: int) -> Callable:
    return lambda bits: bits[:, :, attribute].sum(axis=1).astype(float)


def expected_conversion_statistic(ab, behavior: BehaviorParams) -> Callable:
    """E[ad_A attributed count | X] for a one-round identity-report campaign."""
    return lambda bits: _per_record_conversion(ab, behavior, bits)[0].sum(axis=1)


@dataclass(frozen=True)
class SensitivityEstimate:
    value: float
    half_width: float
    method: str


def sensitivity(spec: SensitivitySpec, framework: PufferfishFramework, rng: Optional[np.random.Generator] = None,
                accept_floor: int = MC_ACCEPT_FLOOR) -> float:
    """Delta_i F = max over theta and secret pairs of |E[F | s_a] - E[F | s_b]|."""
    return sensitivity_estimate(spec, framework, rng, accept_floor).value


def sensitivity_estimate(spec: SensitivitySpec, framework: PufferfishFramework,
                         rng: Optional[np.random.Generator] = None,
                         accept_floor: int = MC_ACCEPT_FLOOR) -> SensitivityEstimate:
    if spec.attribute >= framework.ell:
        raise DimensionError("sensitive attribute index out of range")
    exact = all(t.enumerable for t in framework.thetas)
    if not exact and rng is None:
        raise ConfigurationError("non-enumerable framework needs an rng for Monte Carlo")
    best, best_hw, any_feasible = 0.0, 0.0, False
    for theta in framework.thetas:
        moments = [_conditional_moments(spec.statistic, framework.secrets[i], theta, exact, rng, accept_floor)
                   for i in range(len(framework.secrets))]
        for a, b in framework.secret_pairs:
            if moments[a] is None or moments[b] is None:
                continue
            any_feasible = True
            gap = abs(moments[a][0] - moments[b][0])
            hw = 3.0 * math.sqrt(moments[a][1] + moments[b][1])
            if gap > best:
                best, best_hw = gap, hw
    if not any_feasible:
        raise InfeasibleSecretError("every secret pair has a zero-probability condition under every theta")
    return SensitivityEstimate(best, best_hw if not exact else 0.0, "exact" if exact else "monte-carlo")


def _conditional_moments(statistic, secret, theta, exact, rng, accept_floor):
    """(E[F | s, theta], variance of that estimate) or None when P(s | theta) = 0."""
    if exact:
        bits, probs = enumerate_datasets(theta)
        w = probs * secret(bits)
        if w.sum() <= 0.0:
            return None
        return float(w @ statistic(bits) / w.sum()), 0.0
    accepted = []
    total = 0
    batch = 20_000
    while sum(len(a) for a in accepted) < accept_floor:
        idx = rng.choice(theta.dist.pmf.size, size=(batch, theta.n), p=theta.dist.pmf)
        bits = outcome_matrix(theta.ell)[idx]
        keep = secret(bits)
        accepted.append(np.asarray(statistic(bits[keep]), dtype=float))
        total += batch
        if total >= 200 * accept_floor and not any(len(a) for a in accepted):
            return None
    vals = np.concatenate(accepted)
    return float(vals.mean()), float(vals.var(ddof=1) / vals.size)


# Verification ----------------------------------------------------------------

@dataclass(frozen=True)
class PufferfishWitness:
    theta_index: int
    secret_a: str
    secret_b: str
    output: object
    p_a: float
    p_b: float
    epsilon: float

    @property
    def ratio(self) -> float:
        if self.p_b == 0.0:
            return math.inf
        return self.p_a / self.p_b

    def to_dict(self) -> dict:
        return {
            "theta_index": self.theta_index, "secret_a": self.secret_a, "secret_b": self.secret_b,
            "output": repr(self.output), "p_a": self.p_a, "p_b": self.p_b, "ratio": self.ratio,
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class Verdict:
    status: str
    epsilon: float
    witness: Optional[PufferfishWitness] = None

    @property
    def violated(self) -> bool:
        return self.status == "violated"

    def to_dict(self) -> dict:
        return {"status": self.status, "epsilon": self.epsilon,
                "witness": None if self.witness is None else self.witness.to_dict()}


def conditional_output(mechanism: Mechanism, secret: SecretPredicate, theta: DataGenerator) -> Optional[tuple]:
    """(outputs, P(M(X) = w | secret, theta)) or None when the secret has probability zero."""
    bits, probs = enumerate_datasets(theta)
    mask = secret(bits)
    w = probs[mask]
    if w.sum() <= 0.0:
        return None
    return mechanism.conditional(bits[mask], w)


def _conditional_at(mechanism: Mechanism, secret: SecretPredicate, theta: DataGenerator, output) -> float:
    # an output outside one side's table can still have positive probability there
    bits, probs = enumerate_datasets(theta)
    mask = secret(bits)
    return float(probs[mask] @ mechanism.output_probability(bits[mask], output) / probs[mask].sum())


def pufferfish_verify(mechanism: Mechanism, framework: PufferfishFramework, epsilon: float,
                      output_grid: Optional[Sequence] = None) -> Verdict:
    """Check e^-eps <= P(w | s_a, theta) / P(w | s_b, theta) <= e^eps on every grid output.

    ``output_grid`` restricts the checked outputs; by default every output
    the mechanism can produce is checked. Returns the first violating
    (theta, pair, output) as a witness.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    bound = math.exp(epsilon) * (1.0 + RATIO_RTOL)
    feasible = False
    for t_idx, theta in enumerate(framework.thetas):
        cache = {}
        for a, b in framework.secret_pairs:
            for s in (a, b):
                if s not in cache:
                    cache[s] = conditional_output(mechanism, framework.secrets[s], theta)
            if cache[a] is None or cache[b] is None:
                continue
            feasible = True
            pa = dict(zip(*cache[a]))
            pb = dict(zip(*cache[b]))
            grid = list(dict.fromkeys(list(pa) + list(pb))) if output_grid is None else list(output_grid)
            for w in grid:
                qa = float(pa[w]) if w in pa else _conditional_at(mechanism, framework.secrets[a], theta, w)
                qb = float(pb[w]) if w in pb else _conditional_at(mechanism, framework.secrets[b], theta, w)
                hi, lo = max(qa, qb), min(qa, qb)
                if hi > 0.0 and hi > bound * lo:
                    witness = PufferfishWitness(t_idx, framework.secrets[a].name, framework.secrets[b].name,
                                                w, qa, qb, epsilon)
                    return Verdict("violated", epsilon, witness)
    if not feasible:
        raise InfeasibleSecretError("every secret pair has a zero-probability condition under every theta")
    return Verdict("satisfied", epsilon)


def recheck_witness(mechanism: Mechanism, framework: PufferfishFramework, witness: PufferfishWitness) -> float:
    """Recompute the witness ratio dataset by dataset; returns P(w | s_a) / P(w | s_b)."""
    theta = framework.thetas[witness.theta_index]
    by_name = {s.name: s for s in framework.secrets}
    bits, probs = enumerate_datasets(theta)
    result = []
    for name in (witness.secret_a, witness.secret_b):
        mask = by_name[name](bits)
        if not mask.any():
            result.append(0.0)
            continue
        column = mechanism.output_probability(bits[mask], witness.output)
        result.append(float(probs[mask] @ column / probs[mask].sum()))
    return math.inf if result[1] == 0.0 else result[0] / result[1]


# Building frameworks from games ----------------------------------------------

def marginal_secret_pair(attribute: int, m0: float, m1: float) -> tuple:
    """Secrets separating g_i near m0 from g_i near m1, split at the midpoint."""
    t = (m0 + m1) / 2.0
    low = threshold_secret(attribute, 0.0, t)
    high = SecretPredicate(f"g_{attribute} > {t:g}", lambda bits: attribute_fraction(bits, attribute) > t + 1e-12)
    return (low, high) if m0 <= m1 else (high, low)


@dataclass(frozen=True)
class Miniature:
    framework: PufferfishFramework
    ab: object
    behavior: BehaviorParams
    keep: tuple


def miniature(d0, d1, ab, behavior: BehaviorParams, n: int = 4, keep: Optional[Sequence[int]] = None) -> Miniature:
    """Shrink an A/B game to an enumerable Pufferfish instance.

    D0 and D1 are marginalized to ``keep`` (default: b_test and the next
    two bits), the ads are restricted to the same bits, and the framework's
    single secret pair separates g_{b_test} near D0's marginal from D1's.
    """
    from .distinguishing import ABTest

    dist0, dist1 = as_distribution(d0), as_distribution(d1)
    ell = dist0.dimension
    if keep is None:
        others = [i for i in range(ell) if i != ab.test_bit][:2]
        keep = [ab.test_bit] + others
    keep = tuple(keep)
    if ab.test_bit not in keep:
        raise ConfigurationError("the miniature must keep the test bit")
    small0, small1 = dist0.marginalize(list(keep)), dist1.marginalize(list(keep))
    small_ab = ABTest(FeatureVector(tuple(ab.ad_a.bits[i] for i in keep)),
                      FeatureVector(tuple(ab.ad_b.bits[i] for i in keep)), keep.index(ab.test_bit))
    attr = small_ab.test_bit
    m0 = float(small0.marginals()[attr])
    m1 = float(small1.marginals()[attr])
    s0, s1 = marginal_secret_pair(attr, m0, m1)
    framework = PufferfishFramework((s0, s1), ((0, 1),),
                                    (DataGenerator(small0, n, "D0"), DataGenerator(small1, n, "D1")))
    return Miniature(framework, small_ab, behavior, keep)


# Violation evidence from the distinguishing game -----------------------------

@dataclass(frozen=True)
class ViolationEvidence:
    status: str
    advantage: float
    half_width: float
    attribute: Optional[int] = None
    secret_pair: Optional[tuple] = None

    @property
    def found(self) -> bool:
        return self.status == "violation-evidence"

    def to_dict(self) -> dict:
        return {"status": self.status, "advantage": self.advantage, "half_width": self.half_width,
                "attribute": self.attribute, "secret_pair": self.secret_pair}


def violation_witness(game_config, trials: int, stream: int = 0) -> ViolationEvidence:
    """Play the distinguishing game; positive advantage beyond 3 sigma is evidence that
    the ecosystem leaks the b_test fraction, i.e. breaks attribute privacy for it."""
    from .distinguishing import estimate_advantage

    est = estimate_advantage(game_config, trials, stream=stream)
    if est.advantage - est.half_width_3sigma > 0.0:
        i = game_config.ab.test_bit
        m0 = float(game_config.dist0.marginals()[i])
        m1 = float(game_config.dist1.marginals()[i])
        return ViolationEvidence("violation-evidence", est.advantage, est.half_width_3sigma, i,
                                 (f"g_{i} ~ {m0:g} (D0)", f"g_{i} ~ {m1:g} (D1)"))
    return ViolationEvidence("inconclusive", est.advantage, est.half_width_3sigma)
