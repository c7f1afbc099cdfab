import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture
def criterion():
    """Record an acceptance verdict; printed in the terminal summary."""

    def record(number, title, ok, detail=""):
        ACCEPTANCE_RESULTS.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{number}] {title}  {detail}")
