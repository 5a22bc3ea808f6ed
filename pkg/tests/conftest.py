import pytest

VERDICTS = []


@pytest.fixture(scope="session")
def verdicts():
    """Shared list of acceptance-criterion verdict lines."""
    return VERDICTS


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdict lines into the terminal report."""
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
