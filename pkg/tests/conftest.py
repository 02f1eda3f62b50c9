from __future__ import annotations

import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
