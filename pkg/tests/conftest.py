import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and return the boolean."""

    def record(number: int, title: str, checks: dict[str, bool], detail: str = "") -> bool:
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
        if detail:
            line += f" | {detail}"
        if failed:
            line += f" | failed: {', '.join(failed)}"
        print(line)
        VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
