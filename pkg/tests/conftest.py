import pytest

# (criterion number, passed, summary line) filled in by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
