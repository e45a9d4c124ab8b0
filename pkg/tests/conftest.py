import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from structmeta.models import mlp  # noqa: E402
from structmeta.taskgen import Dataset, gen_synthetic_tasks, split  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    return mlp([3, 5, 1])


@pytest.fixture
def toy_dataset(rng):
    x = rng.standard_normal((12, 3))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    return Dataset(x, y, name="toy")


@pytest.fixture(scope="session")
def planted_db():
    return split(gen_synthetic_tasks(8, 2, 4, 24, seed=3), 0.25, 3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = module.summary_lines() if module else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
