import math
import time

import mpmath as mp
import numpy as np
import pytest
from scipy.special import gamma

from polybranch.mechanism import Mechanism
from polybranch.quadrature import IntegrandKind, build_integrand, integrate, integrate_function

from .conftest import log_trapezoid, mp_integral


def test_beta_integral_against_two_oracles():
    m = Mechanism.make(b=1, c=1, theta=1.5)
    t = time.perf_counter()
    res = integrate(IntegrandKind.FROM_INFINITY, m, {"y": 0.0})
    assert time.perf_counter() - t < 1.0
    exact = 2 * math.sqrt(math.pi)
    assert res.converged
    assert res.value == pytest.approx(exact, rel=1e-8)
    f = lambda lam: lam**0.5 / (lam * lam + lam) / gamma(1.5)  # noqa: E731
    assert log_trapezoid(f, 1e-14, 1e14, 400_001) == pytest.approx(exact, rel=1e-6)
    assert mp_integral(lambda lam: lam**0.5 / (lam**2 + lam)) / gamma(1.5) == pytest.approx(exact, rel=1e-12)


def test_tail_test_divergence_is_analytic():
    m = Mechanism.make(c=1.0, b=0.0, theta=2.0)
    res = integrate(IntegrandKind.TAIL_TEST, m, {"eps": 1.0})
    assert res.value == math.inf and res.diverged


def test_equal_levels_give_zero(quad):
    assert integrate(IntegrandKind.HIT_TIME, quad, {"x": 1.3, "y": 1.3}).value == 0.0


def test_singular_points_recorded():
    assert IntegrandKind.ABSORPTION.singular_points == ("0", "q", "inf")
    assert IntegrandKind.TAIL_TEST.singular_points == ("inf",)


def test_tolerance_halving(supercritical):
    errs = [integrate(IntegrandKind.EXPLOSION, supercritical, {"x": 1.0}, tol=t, rel_tol=t).abs_error
            for t in (1e-6, 5e-7)]
    assert errs[1] <= errs[0] or errs[1] <= 5e-7


def test_domain_split_additivity(supercritical):
    itg = build_integrand(IntegrandKind.ABSORPTION, supercritical, {"x": 1.0})
    whole = integrate_function(itg).value
    left = integrate_function(build_integrand(IntegrandKind.ABSORPTION, supercritical, {"x": 1.0}))
    itg_l = build_integrand(IntegrandKind.ABSORPTION, supercritical, {"x": 1.0})
    itg_l.hi = 0.7
    itg_r = build_integrand(IntegrandKind.ABSORPTION, supercritical, {"x": 1.0})
    itg_r.lo = 0.7
    split = integrate_function(itg_l).value + integrate_function(itg_r).value
    assert split == pytest.approx(whole, abs=2e-8 * whole)
    assert left.value == whole


@pytest.mark.parametrize("theta", [1.2, 1.5, 1.9])
def test_quadratic_absorption_against_mpmath(theta):
    """Oracle: extended-precision quadrature on (0, A] plus the exact tail series beyond A."""
    m = Mechanism.make(b=-1, c=1, theta=theta)
    with mp.workdps(40):
        A = mp.mpf(200)
        h = lambda lam: (mp.exp(-1) - mp.exp(-lam)) / (lam * lam - lam)  # noqa: E731
        body = mp.quad(lambda lam: h(lam) * lam ** (theta - 1), [0, mp.mpf("1e-6"), 0.5, 1, 2, 10, 50, A])
        # e^(-l) is below 1e-80 on the tail, where h = e^(-1) l^(-2) sum_k l^(-k)
        tail = mp.exp(-1) * mp.nsum(lambda k: A ** (theta - 2 - k) / (2 + k - theta), [0, mp.inf])
        oracle = float((body + tail) / mp.gamma(theta))
    res = integrate(IntegrandKind.ABSORPTION, m, {"x": 1.0})
    assert res.value == pytest.approx(oracle, rel=1e-10)


def test_finiteness_pattern_from_exponents(quad):
    for theta, finite in [(0.8, False), (1.0, False), (1.5, True), (1.9, True), (2.0, False), (2.5, False)]:
        res = integrate(IntegrandKind.FROM_INFINITY, quad.with_theta(theta), {"y": 0.0})
        assert math.isfinite(res.value) is finite
        assert res.diverged is (not finite)


def test_result_serialisation(quad):
    d = integrate(IntegrandKind.FROM_INFINITY, quad, {"y": 0.0}).as_dict()
    assert set(d) >= {"value", "abs_error", "converged", "subdivisions"}
    assert isinstance(d["value"], float)


def test_unconverged_is_flagged(quad):
    res = integrate(IntegrandKind.FROM_INFINITY, quad, {"y": 0.0}, tol=1e-300, rel_tol=1e-300,
                    max_subdivisions=3)
    assert not res.converged
    assert np.isfinite(res.value)
