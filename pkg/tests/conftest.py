import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from helpers import ACCEPTANCE  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        tr.write_line(ACCEPTANCE[n])
    passed = sum(line.startswith("PASS") for line in ACCEPTANCE.values())
    tr.write_line(f"{passed}/{len(ACCEPTANCE)} criteria pass")
