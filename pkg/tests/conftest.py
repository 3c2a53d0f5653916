import contextlib
import time

import pytest

_LINES: list[str] = []


class _Criterion:
    def __init__(self, name: str, budget_s: float | None):
        self.name, self.budget_s = name, budget_s
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion.

    The block fails if it raises or exceeds ``budget_s`` seconds.
    """

    @contextlib.contextmanager
    def run(name: str, budget_s: float | None = None):
        c = _Criterion(name, budget_s)
        t0 = time.perf_counter()
        ok = False
        try:
            yield c
            elapsed = time.perf_counter() - t0
            if budget_s is not None:
                c.note(f"{elapsed:.1f}s of {budget_s:g}s")
                assert elapsed < budget_s, f"{name}: took {elapsed:.1f}s, budget {budget_s:g}s"
            ok = True
        finally:
            detail = "; ".join(c.details)
            _LINES.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))

    return run


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
