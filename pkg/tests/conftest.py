"""Session-wide check reporting.

Tests register one pass/fail line per top-level guarantee through the
``criterion`` fixture; the terminal-summary hook prints the collected lines
after the usual pytest output so the verdicts survive output capturing.
"""

import re

import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record a tagged pass/fail line with its tolerances, then assert."""

    def record(tag, ok, detail):
        _LINES.append((tag, bool(ok), detail))
        assert ok, f"{tag}: {detail}"

    return record


def _tag_key(item):
    m = re.match(r"A(\d+)", item[0])
    return (int(m.group(1)) if m else 10**6, item[0])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for tag, ok, detail in sorted(_LINES, key=_tag_key):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{tag:<4} {status}  {detail}")
