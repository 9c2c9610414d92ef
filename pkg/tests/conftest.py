import pytest

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(key: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[key] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}")
