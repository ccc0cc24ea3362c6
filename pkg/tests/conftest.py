import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slmetro.artifact import ArtifactSpec
from slmetro.simulator import build_scene, trace_image, virtual_device

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def calib():
    return virtual_device("quarter")


@pytest.fixture(scope="session")
def spec():
    return ArtifactSpec()


@pytest.fixture(scope="session")
def flat_scene(spec):
    return build_scene(spec, 0.0, (0.3, -0.2, 1.0), "flat")


@pytest.fixture(scope="session")
def flat_trace(flat_scene, calib):
    return trace_image(flat_scene, calib)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, str] = {}
_RESULTS: dict[int, str] = {}


def pytest_collection_finish(session):
    # session.items is the post-deselection list
    for item in session.items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA[m.args[0]] = m.args[1]


@pytest.fixture
def criterion(request):
    """``check(ok, detail)`` records a PASS/FAIL line for the test's criterion, then asserts."""
    n, title = request.node.get_closest_marker("criterion").args

    def check(ok: bool, detail: str):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _RESULTS[n] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        line = _RESULTS.get(n, f"criterion {n:>2} FAIL  {_CRITERIA[n]}: did not complete")
        terminalreporter.write_line(line)
