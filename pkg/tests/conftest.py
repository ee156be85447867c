import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_acceptance():
    """Record one acceptance verdict; the lines are printed in the terminal summary."""
    def record(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
