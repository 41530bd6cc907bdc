import pytest
from hypothesis import HealthCheck, settings

from she_lab.lattice import build_lattice

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def small_lattice():
    return build_lattice(2.0, 0.1, 0.004, 0.2)


@pytest.fixture
def periodic_lattice():
    return build_lattice(2.0, 0.1, 0.004, 0.2, "periodic")


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_line(request):
    """Record the one-line verdict of an acceptance criterion for the terminal summary."""

    def record(criterion: str, passed: bool, summary: str):
        request.config.stash[_ACCEPTANCE].append(f"{criterion} {'PASS' if passed else 'FAIL'}  {summary}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0].split("-")[1])):
            terminalreporter.write_line(line)
