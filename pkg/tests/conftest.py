from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from ftpss_dispatch.circuit import ComplexPower, MsoSpec, TrainLoad, ZsoSpec

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


def train(l1, p, q=0.0, track="up", id="t"):
    return TrainLoad(id, l1, ComplexPower(p, q), track=track)


def mso(*trains):
    return MsoSpec(trains=tuple(trains))


def zso(*trains):
    return ZsoSpec(trains=tuple(trains))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# --- acceptance reporting --------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the
# terminal summary; measured figures come from ``record_property``.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    details = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, details = _CRITERIA[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
