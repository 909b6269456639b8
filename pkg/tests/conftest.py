import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for the acceptance summary.

    Usage: ``criterion(number, title, passed, detail)``; the line is printed
    immediately (visible with ``-s``) and repeated in the terminal summary.
    """

    def record(number, title, passed, detail=""):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title}"
        if detail:
            line += f" ({detail})"
        print(line)
        _CRITERIA.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
