import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    from margpg.rand import RngStream

    return RngStream(20240917)


@pytest.fixture(scope="session")
def benchmark_data():
    from margpg.models import BenchmarkModel
    from margpg.rand import RngStream

    model = BenchmarkModel()
    x, y = model.simulate({"sigma2_v": 10.0, "sigma2_w": 1.0}, 50, RngStream(3))
    return model, x, y


def assert_allclose_log(a, b, rtol):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    np.testing.assert_array_less(np.abs(a - b), rtol * np.maximum(1.0, np.abs(b)))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion; echoed in the terminal summary."""

    def _report(tag, ok, detail):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
