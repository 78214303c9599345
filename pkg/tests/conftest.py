import numpy as np
import pytest

from adleak.behaviors import BehaviorParams
from adleak.distinguishing import ABTest, GameConfig
from adleak.feature_space import CorrelatedBernoulliSpec, FeatureVector, ar1_correlation, derive_alternate

ELL = 8


def default_null_spec(ell: int = ELL, other: float = 0.05, rho: float = 0.3) -> CorrelatedBernoulliSpec:
    marginals = [other] * ell
    marginals[0] = 0.5
    return CorrelatedBernoulliSpec(tuple(marginals), ar1_correlation(ell, rho))


def default_ab(ell: int = ELL) -> ABTest:
    return ABTest.build(ell, 0, FeatureVector((1,) * ell))


def game(alt: float, behavior: BehaviorParams, n: int = 1, arm: str = "ecosystem", seed: int = 3, **kw) -> GameConfig:
    spec0 = default_null_spec()
    return GameConfig(n, spec0, derive_alternate(spec0, 0, alt), default_ab(), behavior, arm=arm, master_seed=seed, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; assert afterwards."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
