import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_LINES = []


def report(criterion, name, ok, detail):
    """Print one acceptance line and keep it for the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {name} -- {detail}"
    _LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
