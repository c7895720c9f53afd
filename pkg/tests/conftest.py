"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records criterion ``n``, prints it, then asserts ``ok``."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        VERDICTS[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {criterion}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n not in VERDICTS:
            terminalreporter.write_line(f"criterion {n:>2}: n/a   no verdict (not selected, or errored before checking)")
            continue
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
