import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtalloc.graph import cycle_graph
from dtalloc.objective import Problem, Quadratic, generator_cost

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def two_gen():
    """Type A and type B generators sharing 100 units: optimum (50, 50), phi* = 6."""
    return Problem((Quadratic(0.04, 2.0), Quadratic(0.03, 3.0)), 100.0)


@pytest.fixture
def edp5():
    return Problem(tuple(generator_cost(k) for k in "ABCDE"), 300.0)


@pytest.fixture
def cycle5():
    return cycle_graph(5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the run
_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion(record_property):
    """Attach a label and a detail line to an acceptance test."""

    def note(label: str, detail: str = "") -> None:
        record_property("criterion", label)
        record_property("detail", detail)
        print(f"{label}: {detail}")

    return note


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    props = {}
    for key, val in report.user_properties:
        props[key] = val
    label = props.get("criterion", report.nodeid.split("::")[-1])
    _ACCEPTANCE.append((label, "PASS" if report.passed else "FAIL", props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, outcome, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{outcome} criterion {label}  {detail}")
