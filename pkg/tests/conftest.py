import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Print a criterion verdict and keep it for the terminal summary."""
    def emit(number, passed, message):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {message}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
