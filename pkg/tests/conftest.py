from __future__ import annotations

from pathlib import Path

import pytest

from segdst.core import load_schema
from segdst.data import load_dataset

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
OPEN_JSONL = FIXTURES / "open_domain_5.jsonl"
MWOZ_DIR = FIXTURES / "mwoz"
DIALSEG_DIR = FIXTURES / "dialseg"


@pytest.fixture(scope="session")
def open_schema():
    return load_schema("open_domain")


@pytest.fixture(scope="session")
def mwoz_schema():
    return load_schema("mwoz")


@pytest.fixture(scope="session")
def segment_schema():
    return load_schema("segment")


@pytest.fixture(scope="session")
def open_bundle():
    return load_dataset(OPEN_JSONL, "jsonl")


@pytest.fixture(scope="session")
def mwoz_bundle(mwoz_schema):
    return load_dataset(MWOZ_DIR, "mwoz24", mwoz_schema)


@pytest.fixture(scope="session")
def dialseg_bundle():
    return load_dataset(DIALSEG_DIR, "dialseg711")


# Acceptance gate: tests tag themselves with record_property("criterion", ...);
# the outcomes are listed one per line at the end of the run.
_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    name = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    elif report.when == "teardown" and report.outcome == "failed":
        _criteria[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split()[0][2:])):
        terminalreporter.write_line(f"{_criteria[name]:4}  {name}")
