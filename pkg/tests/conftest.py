import numpy as np
import pytest

from propswitch.network import ScheduleSet, monotone_closure

# acceptance criterion number -> (passed, summary line)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_closure(rng: np.random.Generator, m: int, max_size: int = 16, top: int = 2) -> ScheduleSet:
    """Downward closure of a few random vectors, kept to at most ``max_size`` members."""
    while True:
        raw = rng.integers(0, top + 1, size=(int(rng.integers(1, 4)), m))
        for c in range(m):
            if raw[:, c].max() == 0:
                raw[int(rng.integers(len(raw))), c] = 1
        S = monotone_closure(raw.tolist())
        if len(S.schedules) <= max_size:
            return S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shared():
    return monotone_closure([[1, 0], [0, 1]])
