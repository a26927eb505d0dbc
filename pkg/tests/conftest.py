import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("picr", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("picr")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr, dtype=np.float64):
    from picr.tensor import Tensor

    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n][1])
