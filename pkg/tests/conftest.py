import pytest

#: criterion number -> (passed, detail), filled by the acceptance tests
_CRITERIA = {}


@pytest.fixture
def record():
    def _record(n: int, passed: bool, detail: str) -> None:
        _CRITERIA[n] = (bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
