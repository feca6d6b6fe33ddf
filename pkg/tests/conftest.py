import numpy as np
import pytest

from beamshm import dataset as ds
from beamshm import fem


@pytest.fixture(scope="session")
def tiny_dataset():
    """81 samples x 400 features; the 20x20 grid only fits the E4 chain."""
    levels = ds.uniform_levels(0.005, 0.015, 3)
    return ds.generate_dataset([levels] * 4, fem.SweepConfig(n_points=100), fem.Material(),
                               cnn_grid=(20, 20))


@pytest.fixture(scope="session")
def desk_dataset():
    return ds.dataset_from_manifest(ds.preset_manifest("desk"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)



_CRITERIA = {}  # number -> {"passed": bool, "details": [str]}


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else mark.args[0]


@pytest.fixture
def record(request):
    """Attach a measured value to the summary line of this test's criterion."""
    entry = _CRITERIA.setdefault(_criterion(request.node), {"passed": True, "details": []})
    return entry["details"].append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = _criterion(item)
    if number is None or rep.when == "teardown" and rep.passed:
        return
    entry = _CRITERIA.setdefault(number, {"passed": True, "details": []})
    if rep.failed or rep.skipped and rep.when == "setup":
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  " + "; ".join(entry["details"]))
