import numpy as np
import pytest

from enspost.data import SyntheticConfig, generate_synthetic, split_by_period


@pytest.fixture(scope="session")
def small_archive():
    """Six stations, two years; 2015 trains and 2016 validates."""
    return generate_synthetic(SyntheticConfig(S=6, T=730, seed=11))


@pytest.fixture(scope="session")
def small_split(small_archive):
    return split_by_period(small_archive, ("2015-01-01", "2015-12-31"), ("2016-01-01", "2016-12-31"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
