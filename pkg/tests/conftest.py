"""Collects acceptance verdicts and prints one PASS/FAIL line per criterion at the end of the run."""

from pathlib import Path

import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}
_MODULE_FAILURES: list[str] = []
_MODULE_RAN: set[str] = set()
_ACCEPTANCE = "test_acceptance.py"


class Verdicts:
    def record(self, number: int, ok: bool, detail: str) -> None:
        _VERDICTS[number] = (bool(ok), detail)


@pytest.fixture(scope="session")
def verdicts() -> Verdicts:
    return Verdicts()


def pytest_runtest_logreport(report):
    name = Path(report.fspath).name
    if name == _ACCEPTANCE:
        return
    _MODULE_RAN.add(name)
    if report.failed:
        _MODULE_FAILURES.append(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    if 10 in _VERDICTS:
        ok, detail = _VERDICTS[10]
        if _MODULE_RAN:
            suites = f"{len(_MODULE_RAN)} module suites, {len(_MODULE_FAILURES)} failures"
            _VERDICTS[10] = (ok and not _MODULE_FAILURES, f"{detail}; {suites}")
        else:
            _VERDICTS[10] = (ok, f"{detail}; module suites not part of this session")
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
