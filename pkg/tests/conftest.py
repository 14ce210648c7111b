from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> title, list of (part, passed, detail)
_CRITERIA: dict[int, tuple[str, list[tuple[str, bool, str]]]] = {}


class CriterionLog:
    def __call__(self, number: int, title: str, passed: bool, detail: str, part: str = "") -> bool:
        _CRITERIA.setdefault(number, (title, []))[1].append((part, bool(passed), detail))
        return bool(passed)


@pytest.fixture
def criterion() -> CriterionLog:
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, parts = _CRITERIA[number]
        ok = all(p[1] for p in parts)
        detail = "; ".join((f"{part}: " if part else "") + f"{'ok' if good else 'FAILED'} ({d})"
                           for part, good, d in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}")
