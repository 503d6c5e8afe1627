"""Shared pytest plumbing for the acceptance gate.

Acceptance tests record one verdict line per criterion via
``record_criterion``; the lines are echoed immediately (visible with
``pytest -s``) and replayed in a dedicated terminal-summary section so a
plain ``pytest -v`` run always ends with one pass/fail line per criterion.
"""

CRITERION_LINES = []


def record_criterion(line):
    CRITERION_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)
