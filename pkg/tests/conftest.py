import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from dyadvar.dyad import CovariateTensor, DyadicPanel, WeightScheme, _eligible_mask

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_panel(rng, n, T, M=0):
    flows = rng.normal(size=(T + 1, n, n))
    X = CovariateTensor(rng.normal(size=(T + 1, n, n, M)))
    return DyadicPanel(flows), X


def random_weights(rng, n):
    """Random normalized weights, different in each family."""
    w = rng.uniform(0.1, 1.0, size=(4, n, n, n)) * _eligible_mask(n)
    s = w.sum(axis=3, keepdims=True)
    return WeightScheme(np.divide(w, s, out=np.zeros_like(w), where=s > 0))


@st.composite
def panels(draw, n_min=3, n_max=7, T_max=4, M_max=3):
    n = draw(st.integers(n_min, n_max))
    T = draw(st.integers(1, T_max))
    M = draw(st.integers(0, M_max))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    panel, X = random_panel(rng, n, T, M)
    return panel, X, random_weights(rng, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary is printed at the end of the session."""

    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
