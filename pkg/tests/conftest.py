import pytest

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str):
        # several tests may report on one criterion; all parts must pass
        if number in _ACCEPTANCE:
            ok, prev = _ACCEPTANCE[number]
            _ACCEPTANCE[number] = (ok and bool(passed), f"{prev}; {detail}")
        else:
            _ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
