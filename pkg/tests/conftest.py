import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
