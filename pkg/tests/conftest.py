import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def finite(lo=-5.0, hi=5.0):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


@st.composite
def polylines(draw, min_n=2, max_n=12, closed=None):
    """Random curves with segments bounded away from zero length."""
    n = draw(st.integers(min_n if closed is not True else 3, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    steps = rng.normal(size=(n, 2))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    steps *= rng.uniform(0.1, 1.0, size=(n, 1))
    pts = np.cumsum(steps, axis=0) + rng.uniform(-2, 2, size=2)
    is_closed = draw(st.booleans()) if closed is None else closed
    return pts, is_closed


def fd_gradient(f, x, h=1e-6):
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        d = np.zeros_like(x)
        d[i] = h
        g[i] = (f(x + d) - f(x - d)) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-8):
    """Largest coordinate-wise ``|a - b| / max(|b|, floor)``."""
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria register one line each; the lines are repeated in the terminal summary.
ACCEPTANCE: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
