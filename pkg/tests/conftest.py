import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts (recorded via record_property) after the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
