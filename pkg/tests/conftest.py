import pytest

REPORT = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record ``(criterion, ok, detail)`` for the end-of-session summary."""
    lines = request.config.stash.setdefault(REPORT, [])

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
