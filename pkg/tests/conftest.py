import pytest

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; the summary prints them in criterion order."""

    def record(label, ok: bool, detail: str) -> bool:
        _VERDICTS[str(label)] = f"criterion {str(label):>3s}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_VERDICTS, key=lambda s: (int(s.rstrip("ab")), s)):
        terminalreporter.write_line(_VERDICTS[label])
