"""Shared pytest wiring.

The acceptance tests record one verdict per release criterion; echo them
after the summary so they appear even when output capture is on.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    verdicts = getattr(mod, "VERDICTS", None) if mod else None
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, verdict in sorted(verdicts):
        terminalreporter.write_line(f"ACCEPTANCE {num} {label}: {verdict}")
