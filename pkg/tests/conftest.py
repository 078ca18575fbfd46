import numpy as np
import pytest

from ppide import AtomicLaw, CadlagPath, Characteristics, FiniteLevy


@pytest.fixture
def jump_char():
    """b = 0.1, σ = 0.3, symmetric jumps ±0.4 at rate 1."""
    return Characteristics.constant(b=0.1, sigma=0.3, jumps=FiniteLevy(1.0, AtomicLaw([[-0.4], [0.4]], [0.5, 0.5])))


@pytest.fixture
def zero_path():
    return CadlagPath.constant([0.0], 1.0)


def terminal(h):
    return h.current[:, 0]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""

    def record(number: int, title: str, ok: bool, detail: str, seconds: float, budget: float):
        ok = bool(ok) and seconds <= budget
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail} [{seconds:.1f}s of {budget:.0f}s]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
