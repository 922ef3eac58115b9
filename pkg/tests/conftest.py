import pytest

# filled by the acceptance tests, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
