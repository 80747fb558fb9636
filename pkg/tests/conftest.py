"""Shared pytest plumbing: collects per-criterion outcomes from the
acceptance suite and prints one pass/fail line per criterion at the end
of the run."""

import re

_RESULTS = {}  # criterion number -> (title, passed)
_NOTES = {}  # criterion number -> short measurement string


def note(num: int, text: str) -> None:
    """Attach a measurement note to an acceptance criterion line."""
    _NOTES[num] = text


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m is None:
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    title = doc[0].rstrip(".") if doc else item.name
    _RESULTS[int(m.group(1))] = (title, call.excinfo is None)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        title, passed = _RESULTS[num]
        line = f"criterion {num:2d} {'PASS' if passed else 'FAIL'}  {title}"
        if num in _NOTES:
            line += f"  [{_NOTES[num]}]"
        terminalreporter.write_line(line)
