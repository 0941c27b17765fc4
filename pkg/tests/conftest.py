import numpy as np
import pytest

from datamarket.core import FeatureMatrix, PredictionTask


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def linear_market(rng, M=4, T=80, noise=0.1, support=(0, 1)):
    Z = rng.standard_normal((M, T))
    y = Z[list(support)].sum(axis=0) + noise * rng.standard_normal(T)
    return FeatureMatrix(Z), PredictionTask.split(y)


@pytest.fixture
def market(rng):
    return linear_market(rng)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, printed after the run."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
