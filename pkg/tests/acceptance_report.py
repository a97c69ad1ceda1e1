"""Shared recorder for the acceptance suite's verdict lines.

Pytest captures stdout, so the acceptance tests also append their
[PASS]/[FAIL] lines here; conftest replays them in the terminal summary
where they stay visible in -v runs.
"""

LINES = []


def record(ok, label, text):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {text}"
    LINES.append(line)
    print(line)
    return ok


def record_raw(line):
    LINES.append(line)
    print(line)
