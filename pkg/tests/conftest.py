import numpy as np
import pytest

from uad.evaluation import ExperimentPlan
from uad.wigan import TrainConfig, train

ACCEPTANCE_LINES: list[str] = []


class TrainedCache:
    """Generators trained on case-1 training data, one per seed, built lazily."""

    def __init__(self):
        self._models = {}

    def get(self, seed: int):
        if seed not in self._models:
            data = ExperimentPlan("case1", seed=seed).training_data(10000)
            self._models[seed] = train(data, TrainConfig(seed=seed))
        return self._models[seed]


@pytest.fixture(scope="session")
def trained():
    return TrainedCache()


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
