import numpy as np
import pytest

from sesaa import mi
from sesaa.dataset import filter_analysis_population
from sesaa.synthgen import GeneratorConfig, generate_population


@pytest.fixture(scope="session")
def generated():
    return generate_population(GeneratorConfig())


@pytest.fixture(scope="session")
def records(generated):
    return generated[0]


@pytest.fixture(scope="session")
def manifest(generated):
    return generated[1]


@pytest.fixture(scope="session")
def population(records):
    return filter_analysis_population(records)


@pytest.fixture(scope="session")
def fitted(population):
    return mi.fit_pipeline(population)


@pytest.fixture(scope="session")
def quota_runs(fitted):
    return mi.run_replications(fitted, "quota", m=40, master_seed=0)


@pytest.fixture(scope="session")
def unconstrained_runs(fitted):
    return mi.run_replications(fitted, "unconstrained", m=40, master_seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, PASS or FAIL, after the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, text = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[number] = (text, rep.passed and rep.when == "call", rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        text, ok, duration, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}  [{duration:.1f}s]"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
