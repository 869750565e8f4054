import numpy as np
import pytest

from gvarfsv.model_core import ModelSpec
from gvarfsv.simulate import make_truth, random_weights, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_spec():
    return ModelSpec(n_countries=2, k_country=2, m_surprise=1, k_aggregate_low_freq=1, n_factors=1)


@pytest.fixture
def tiny_system():
    """(spec, truth, simulated panel) with N=2, k=2, m=1, k~=2, F=1, T=120."""
    spec = ModelSpec(n_countries=2, k_country=2, m_surprise=1, k_aggregate_low_freq=2, n_factors=1)
    rng = np.random.default_rng(5)
    truth = make_truth(spec, rng, weights=random_weights(2, rng))
    sim = simulate(truth, 120, rng)
    return spec, truth, sim


_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``."""
    def record(name, passed, detail=""):
        _CRITERIA.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
