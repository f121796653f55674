import math

import mpmath as mp
import numpy as np
import pytest

from polybranch import _backend
from polybranch.mechanism import Mechanism, stable_scale_for_unit_power


@pytest.fixture
def quad():
    """psi(l) = l^2 + l."""
    return Mechanism.make(b=1.0, c=1.0, theta=1.5)


@pytest.fixture
def supercritical():
    """psi(l) = l^2 - l, q = 1."""
    return Mechanism.make(b=-1.0, c=1.0, theta=1.5)


@pytest.fixture
def stable15():
    """psi(l) = l^1.5."""
    scale, b = stable_scale_for_unit_power(1.5)
    return Mechanism.make(b=b, stable=(1.5, scale), theta=1.5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


requires_compiled = pytest.mark.skipif(_backend._compiled is None, reason="compiled kernels not built")


def mp_integral(f, lo=0, hi=mp.inf, dps=30):
    """Independent oracle: tanh-sinh quadrature in extended precision."""
    with mp.workdps(dps):
        pts = [lo] + [p for p in (1e-6, 1e-3, 1, 10, 1e3) if lo < p < hi] + [hi]
        return float(mp.quad(f, pts))


def log_trapezoid(f, lo, hi, n=200_001):
    """Second independent oracle: trapezoid rule in u = log(l)."""
    u = np.linspace(math.log(lo), math.log(hi), n)
    lam = np.exp(u)
    return float(np.trapezoid(lam * f(lam), u))
