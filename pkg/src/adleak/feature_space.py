"""Binary feature vectors and distributions over {0,1}^ell.

Outcomes are indexed by reading the bit vector as a binary number with
``bits[0]`` as the most significant bit, so index 0b1010 is the vector 1010.
Every distribution is held as a dense probability array of length 2**ell.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.stats import norm, qmc

from .errors import CapacityError, DimensionError, ModelError

MAX_EXACT_DIM = 12
PMF_ATOL = 1e-9
MARGINAL_ATOL = 1e-6


@dataclass(frozen=True)
class FeatureVector:
    """A length-ell binary vector: user features, ad content, or an audience."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise DimensionError("feature vectors need at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise ModelError(f"feature vector entries must be 0 or 1, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "FeatureVector":
        return cls(tuple(int(c) for c in text.strip()))

    @classmethod
    def from_index(cls, index: int, ell: int) -> "FeatureVector":
        if not 0 <= index < 2**ell:
            raise DimensionError(f"index {index} out of range for ell={ell}")
        return cls(tuple((index >> (ell - 1 - i)) & 1 for i in range(ell)))

    @classmethod
    def zeros(cls, ell: int) -> "FeatureVector":
        return cls((0,) * ell)

    @property
    def index(self) -> int:
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    def __len__(self):
        return len(self.bits)

    def __getitem__(self, i):
        return self.bits[i]

    def __str__(self):
        return "".join(str(b) for b in self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int8)

    def with_bit(self, i: int, value: int) -> "FeatureVector":
        bits = list(self.bits)
        bits[i] = value
        return FeatureVector(tuple(bits))


VectorLike = Union[FeatureVector, str, Sequence[int]]


def as_vector(v: VectorLike) -> FeatureVector:
    if isinstance(v, FeatureVector):
        return v
    if isinstance(v, str):
        return FeatureVector.from_string(v)
    return FeatureVector(tuple(v))


def closeness(a: VectorLike, b: VectorLike) -> float:
    """Normalized Hamming similarity: ``1 - hamming(a, b) / ell``."""
    a, b = as_vector(a), as_vector(b)
    if len(a) != len(b):
        raise DimensionError(f"cannot compare vectors of length {len(a)} and {len(b)}")
    mismatches = sum(x != y for x, y in zip(a.bits, b.bits))
    return 1.0 - mismatches / len(a)


@functools.lru_cache(maxsize=None)
def _outcome_matrix(ell: int) -> np.ndarray:
    idx = np.arange(2**ell)
    shifts = np.arange(ell - 1, -1, -1)
    out = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)
    out.setflags(write=False)
    return out


def outcome_matrix(ell: int) -> np.ndarray:
    """Read-only (2**ell, ell) array whose row k is the bit vector of outcome k."""
    if ell > MAX_EXACT_DIM:
        raise CapacityError(f"ell={ell} exceeds the enumeration limit {MAX_EXACT_DIM}")
    return _outcome_matrix(ell)


def closeness_to_all(v: VectorLike, ell: int) -> np.ndarray:
    """closeness(v, x) for every outcome x, as an array indexed like a PMF."""
    v = as_vector(v)
    if len(v) != ell:
        raise DimensionError(f"vector has length {len(v)}, expected {ell}")
    mism = (outcome_matrix(ell) != v.as_array()[None, :]).sum(axis=1)
    return 1.0 - mism / ell


class ExplicitDistribution:
    """A probability mass function over all 2**ell binary outcomes."""

    def __init__(self, pmf, *, info: Mapping | None = None):
        arr = np.array(pmf, dtype=float)
        if arr.ndim != 1 or arr.size < 2 or arr.size & (arr.size - 1):
            raise DimensionError("PMF length must be a power of two >= 2")
        ell = arr.size.bit_length() - 1
        if ell > MAX_EXACT_DIM:
            raise CapacityError(f"ell={ell} exceeds the enumeration limit {MAX_EXACT_DIM}")
        if np.any(arr < 0):
            raise ModelError("probabilities must be non-negative")
        if abs(arr.sum() - 1.0) > PMF_ATOL:
            raise ModelError(f"probabilities sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        self._pmf = arr
        self.dimension = ell
        self.info = dict(info or {})

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "ExplicitDistribution":
        """Build from ``{vector: probability}``; absent outcomes get zero mass."""
        keys = [as_vector(k) for k in mapping]
        if not keys:
            raise ModelError("empty mapping")
        ell = len(keys[0])
        pmf = np.zeros(2**ell)
        for k, p in zip(keys, mapping.values()):
            if len(k) != ell:
                raise DimensionError("mixed vector lengths in mapping")
            pmf[k.index] += p
        return cls(pmf)

    @classmethod
    def point_mass(cls, v: VectorLike) -> "ExplicitDistribution":
        v = as_vector(v)
        pmf = np.zeros(2 ** len(v))
        pmf[v.index] = 1.0
        return cls(pmf)

    @classmethod
    def uniform(cls, ell: int) -> "ExplicitDistribution":
        return cls(np.full(2**ell, 2.0**-ell))

    @property
    def pmf(self) -> np.ndarray:
        return self._pmf

    def as_array(self) -> np.ndarray:
        return self._pmf

    @property
    def probabilities(self) -> dict:
        return {FeatureVector.from_index(i, self.dimension): float(p) for i, p in enumerate(self._pmf)}

    def prob(self, v: VectorLike) -> float:
        v = as_vector(v)
        if len(v) != self.dimension:
            raise DimensionError("vector length does not match distribution")
        return float(self._pmf[v.index])

    def marginals(self) -> np.ndarray:
        """P(bit i = 1) for each i."""
        return self._pmf @ outcome_matrix(self.dimension)

    def marginalize(self, keep: Sequence[int]) -> "ExplicitDistribution":
        """Distribution of the bits ``keep`` (in that order)."""
        keep = list(keep)
        if not keep or any(not 0 <= k < self.dimension for k in keep):
            raise DimensionError(f"bad bit selection {keep}")
        sub = outcome_matrix(self.dimension)[:, keep]
        weights = 1 << np.arange(len(keep) - 1, -1, -1)
        idx = sub @ weights
        out = np.bincount(idx, weights=self._pmf, minlength=2 ** len(keep))
        return ExplicitDistribution(out / out.sum())

    def __eq__(self, other):
        if not isinstance(other, ExplicitDistribution):
            return NotImplemented
        return self.dimension == other.dimension and np.allclose(self._pmf, other._pmf, atol=PMF_ATOL, rtol=0)

    __hash__ = None

    def __repr__(self):
        return f"ExplicitDistribution(ell={self.dimension})"


def sample(dist: ExplicitDistribution, rng: np.random.Generator) -> FeatureVector:
    """Draw one feature vector; consumes exactly one uniform from ``rng``."""
    idx = sample_indices(dist, rng, 1)[0]
    return FeatureVector.from_index(int(idx), dist.dimension)


def sample_indices(dist: ExplicitDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    cdf = np.cumsum(dist.pmf)
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def _mass_array(p) -> np.ndarray:
    if hasattr(p, "as_array"):
        arr = np.asarray(p.as_array(), dtype=float)
    else:
        arr = np.asarray(p, dtype=float)
    if np.any(arr < 0):
        raise ModelError("negative mass")
    return arr


def _pair(p, q):
    a, b = _mass_array(p), _mass_array(q)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def total_variation(p, q) -> float:
    a, b = _pair(p, q)
    return 0.5 * float(np.abs(a - b).sum())


def hellinger_squared(p, q) -> float:
    """Squared Hellinger distance, applied as written to (sub-)distributions."""
    a, b = _pair(p, q)
    return 0.5 * float(((np.sqrt(a) - np.sqrt(b)) ** 2).sum())


@dataclass(frozen=True)
class CorrelatedBernoulliSpec:
    """Correlated binary vector via Gaussian-copula thresholding.

    Bit i is 1 when latent Z_i < Phi^{-1}(marginals[i]), with Z ~ N(0, correlation).
    """

    marginals: tuple
    correlation: tuple

    def __post_init__(self):
        m = tuple(float(x) for x in np.asarray(self.marginals, dtype=float).ravel())
        c = np.asarray(self.correlation, dtype=float)
        ell = len(m)
        if ell == 0:
            raise DimensionError("need at least one bit")
        if c.shape != (ell, ell):
            raise DimensionError(f"correlation must be {ell}x{ell}, got {c.shape}")
        if any(not 0.0 <= x <= 1.0 for x in m):
            raise ModelError("marginals must lie in [0, 1]")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ModelError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(c), 1.0, atol=1e-12):
            raise ModelError("correlation matrix must have unit diagonal")
        if np.any(np.abs(c) > 1 + 1e-12):
            raise ModelError("correlations must lie in [-1, 1]")
        object.__setattr__(self, "marginals", m)
        object.__setattr__(self, "correlation", tuple(tuple(float(x) for x in row) for row in c))

    @classmethod
    def independent(cls, marginals) -> "CorrelatedBernoulliSpec":
        return cls(tuple(marginals), np.eye(len(marginals)))

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    def correlation_matrix(self) -> np.ndarray:
        return np.array(self.correlation)

    def to_dict(self) -> dict:
        return {"marginals": list(self.marginals), "correlation": [list(r) for r in self.correlation]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrelatedBernoulliSpec":
        return cls(tuple(d["marginals"]), d["correlation"])


def derive_alternate(spec: CorrelatedBernoulliSpec, test_bit: int, new_marginal: float) -> CorrelatedBernoulliSpec:
    """Copy of ``spec`` with one marginal replaced; correlation untouched."""
    if not 0 <= test_bit < spec.dimension:
        raise DimensionError(f"test bit {test_bit} out of range for ell={spec.dimension}")
    if not 0.0 <= new_marginal <= 1.0:
        raise ModelError("marginal must lie in [0, 1]")
    m = list(spec.marginals)
    m[test_bit] = float(new_marginal)
    return CorrelatedBernoulliSpec(tuple(m), spec.correlation)


# QMC settings used by materialize; recorded on the result's ``info``.
QMC_LOG2_POINTS = 20
QMC_SEED = 20240601


def materialize(spec: CorrelatedBernoulliSpec) -> ExplicitDistribution:
    """Exact-marginal PMF of a copula spec (ell <= 12).

    Independent blocks of the correlation matrix are multiplied in closed
    form. Each correlated block is integrated with a fixed-seed scrambled
    Sobol sequence and then raked (iterative proportional fitting) so its
    one-bit marginals match the requested ones to machine precision.
    """
    return _materialize_cached(spec)


@functools.lru_cache(maxsize=256)
def _materialize_cached(spec: CorrelatedBernoulliSpec) -> ExplicitDistribution:
    ell = spec.dimension
    if ell > MAX_EXACT_DIM:
        raise CapacityError(f"ell={ell} exceeds the enumeration limit {MAX_EXACT_DIM}")
    corr = spec.correlation_matrix()
    if np.linalg.eigvalsh(corr).min() < -1e-10:
        raise ModelError("correlation matrix is not positive semidefinite")
    marg = np.array(spec.marginals)

    bits = _outcome_matrix(ell)
    pmf = np.ones(2**ell)
    free = []
    for i in range(ell):
        if marg[i] in (0.0, 1.0):
            pmf *= bits[:, i] == int(marg[i])
        else:
            free.append(i)

    qmc_used = False
    for comp in _components(corr, free):
        table = _block_pmf(marg[comp], corr[np.ix_(comp, comp)])
        qmc_used |= len(comp) > 1
        weights = 1 << np.arange(len(comp) - 1, -1, -1)
        pmf *= table[bits[:, comp] @ weights]

    pmf = np.clip(pmf, 0.0, None)
    pmf /= pmf.sum()
    info = {"method": "exact"}
    if qmc_used:
        info = {"method": "sobol-qmc+ipf", "points": 2**QMC_LOG2_POINTS, "seed": QMC_SEED}
    return ExplicitDistribution(pmf, info=info)


def _components(corr: np.ndarray, idx: list) -> list:
    """Connected components of the non-zero correlation graph restricted to ``idx``."""
    remaining = list(idx)
    comps = []
    while remaining:
        stack = [remaining.pop(0)]
        comp = []
        while stack:
            i = stack.pop()
            comp.append(i)
            linked = [j for j in remaining if corr[i, j] != 0.0]
            for j in linked:
                remaining.remove(j)
            stack.extend(linked)
        comps.append(sorted(comp))
    return comps


def _block_pmf(marg: np.ndarray, corr: np.ndarray) -> np.ndarray:
    k = len(marg)
    if k == 1:
        return np.array([1.0 - marg[0], marg[0]])
    vals, vecs = np.linalg.eigh(corr)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    thresholds = norm.ppf(marg)
    weights = 1 << np.arange(k - 1, -1, -1)
    counts = np.zeros(2**k)
    sobol = qmc.Sobol(d=k, scramble=True, seed=QMC_SEED)
    chunk = 2**16
    for _ in range(2**QMC_LOG2_POINTS // chunk):
        u = np.clip(sobol.random(chunk), 1e-15, 1 - 1e-15)
        z = norm.ppf(u) @ factor.T
        cells = (z < thresholds).astype(np.int64) @ weights
        counts += np.bincount(cells, minlength=2**k)
    table = counts / counts.sum()
    return _rake(table, marg)


def _rake(table: np.ndarray, marg: np.ndarray, tol: float = 1e-14, max_iter: int = 1000) -> np.ndarray:
    k = len(marg)
    bits = _outcome_matrix(k).astype(bool)
    table = table.copy()
    for _ in range(max_iter):
        worst = 0.0
        for j in range(k):
            ones = table[bits[:, j]].sum()
            zeros = table[~bits[:, j]].sum()
            if ones <= 0.0 or zeros <= 0.0:
                raise ModelError(f"marginal {marg[j]!r} too extreme to integrate numerically")
            worst = max(worst, abs(ones - marg[j]))
            table[bits[:, j]] *= marg[j] / ones
            table[~bits[:, j]] *= (1.0 - marg[j]) / zeros
        if worst < tol:
            break
    return table / table.sum()


def as_distribution(d) -> ExplicitDistribution:
    """Accept either an ExplicitDistribution or a copula spec."""
    if isinstance(d, ExplicitDistribution):
        return d
    if isinstance(d, CorrelatedBernoulliSpec):
        return materialize(d)
    raise TypeError(f"expected a distribution or spec, got {type(d).__name__}")


def equicorrelation(ell: int, rho: float) -> np.ndarray:
    c = np.full((ell, ell), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


def ar1_correlation(ell: int, rho: float) -> np.ndarray:
    i = np.arange(ell)
    return float(rho) ** np.abs(i[:, None] - i[None, :])
