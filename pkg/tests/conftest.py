import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record ``(name, passed, detail)`` for the end-of-run acceptance summary."""
    def record(name, passed, detail=""):
        _VERDICTS.append((name, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
