import logging

import numpy as np
import pytest

_criteria: list[tuple[str, str, str, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="phytaylor")


@pytest.fixture
def criterion(request):
    """Attach an acceptance-criterion id and a detail line to the current test."""
    def record(cid: str, title: str, detail: str = ""):
        request.node.user_properties.append(("criterion", (cid, title, detail)))
    return record


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            cid, title, detail = value
            _criteria.append((cid, title, report.outcome.upper(), detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, outcome, detail in sorted(_criteria, key=lambda c: _sort_key(c[0])):
        word = "PASS" if outcome == "PASSED" else "FAIL"
        line = f"[{word}] {cid:>3}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))


def _sort_key(cid: str):
    digits = "".join(ch for ch in cid if ch.isdigit())
    return int(digits), cid
