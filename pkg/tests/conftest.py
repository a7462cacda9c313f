from __future__ import annotations

import random

import numpy as np
import pytest

from paveval.dataset import Annotation, DistressClass, ImageRecord
from paveval.geometry import BBox

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        previous = _criteria.get(number, ("PASS", title))[0]
        status = "PASS" if report.outcome == "passed" and previous == "PASS" else "FAIL"
        _criteria[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=int):
        status, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def image() -> ImageRecord:
    px = np.random.default_rng(7).integers(0, 256, size=(80, 100, 3), dtype=np.uint8)
    anns = (
        Annotation(BBox(10, 20, 30, 40), DistressClass.LONGITUDINAL),
        Annotation(BBox(50, 10, 90, 30), DistressClass.TRANSVERSE),
        Annotation(BBox(40, 45, 60, 75), DistressClass.ALLIGATOR),
    )
    return ImageRecord("sample", 100, 80, anns, px)
