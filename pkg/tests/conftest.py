import numpy as np
import pytest

from battkd import seqdata
from battkd.timer import TimerConfig, TimerModel

TINY_TIMER = TimerConfig(segment=24, d_model=16, n_layers=1, n_heads=2, d_ff=32, max_tokens=12)


@pytest.fixture
def tiny_timer():
    return TimerModel(TINY_TIMER, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_windows():
    corpus = seqdata.synthesize_corpus("CALCE-like", 2, 300, seed=4)
    return seqdata.build_windows(corpus.series, stride=24)


# criterion number -> (title, passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
