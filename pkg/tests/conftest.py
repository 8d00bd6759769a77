import numpy as np
import pytest

from hmaxfpga import synth
from hmaxfpga.pipeline import c1_bands
from hmaxfpga.s2_patches import imprint

_criteria: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        num, title = marker
        prev = _criteria.get(num, (title, "PASS"))[1]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if prev == "FAIL":
            status = "FAIL"
        _criteria[num] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().criterion = (m.args[0], m.kwargs.get("title", item.name))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, status = _criteria[num]
        terminalreporter.write_line(f"criterion {num:2d} {status}  {title}")


@pytest.fixture(scope="session")
def noise_corpus():
    rng = np.random.default_rng(1234)
    return [synth.pink_noise(rng) for _ in range(3)]


@pytest.fixture(scope="session")
def small_dictionary(noise_corpus):
    """16 patches per size imprinted from fixed-mode C1 of three 1/f images."""
    return imprint([c1_bands(img, "fixed") for img in noise_corpus], per_size=16, seed=7)
