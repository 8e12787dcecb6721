import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    The fixture yields a ``dict`` the test fills with ``detail``; the line is
    written whether the test passes or fails.
    """
    record = {"detail": ""}
    yield record
    number = request.node.get_closest_marker("criterion").args[0]
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {request.node.name}  {record['detail']}"
    request.config.stash[ACCEPTANCE][number] = line
    print("\n" + line)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
