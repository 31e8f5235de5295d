"""Collects one verdict line per acceptance criterion and prints them at the end."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: _order(s)):
        terminalreporter.write_line(line)


def _order(line: str):
    tag = line.split()[1]
    num = "".join(ch for ch in tag if ch.isdigit())
    return int(num or 0), tag
