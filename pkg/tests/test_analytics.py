import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polybranch.analytics import (
    HxKernel,
    classify,
    conditional_extinction_time,
    hit_prob,
    kernel_table,
    mean_absorption_time,
    mean_explosion_time,
    mean_extinction_time,
    mean_hit_from_infinity,
    mean_hit_time,
    mean_two_sided,
    table_to_csv,
)
from polybranch.mechanism import Mechanism, stable_scale_for_unit_power

from .conftest import log_trapezoid, mp_integral

# Frozen from 30-digit tanh-sinh evaluations of the integral formulas written
# out by hand (independent of the package's integrand builders).
V1_QUAD_EXTINCTION = 2.0291633895284078
V2_SUPER_EXTINCTION = 0.74648749378526041
V2_SUPER_EXPLOSION = 1.4058305338658133
V4_QUAD_TWO_SIDED = 0.32393215463089418


def _stable(theta):
    scale, b = stable_scale_for_unit_power(1.5)
    return Mechanism.make(b=b, stable=(1.5, scale), theta=theta)


# -- hit_prob ---------------------------------------------------------------


def test_hit_prob_examples(supercritical, quad):
    assert hit_prob(supercritical, 1.0, 0.0) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert hit_prob(quad, 5.0, 2.0) == 1.0
    half = Mechanism.make(b=-0.5, c=1.0, theta=1.5)  # q = 0.5
    assert hit_prob(half, 3.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_hit_prob_domain(quad):
    with pytest.raises(ValueError):
        hit_prob(quad, 1.0, 2.0)
    with pytest.raises(ValueError):
        hit_prob(quad, -1.0, 0.0)


@given(st.floats(0.0, 5.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.05, 3.0))
def test_hit_prob_multiplicative(x, fy, fz, b):
    mech = Mechanism.make(b=-b, c=1.0, theta=1.5)
    y = fy * x
    z = fz * y
    assert hit_prob(mech, x, y) * hit_prob(mech, y, z) == pytest.approx(hit_prob(mech, x, z), rel=1e-12)


# -- mean times -------------------------------------------------------------


def test_extinction_time_quadratic(quad):
    assert mean_extinction_time(quad, 1.0) == pytest.approx(V1_QUAD_EXTINCTION, rel=1e-8)
    # q = 0 so absorption and extinction coincide
    assert mean_absorption_time(quad, 1.0) == pytest.approx(V1_QUAD_EXTINCTION, rel=1e-8)
    # second oracle: trapezoid in log-lambda plus the l^-1.5 tail beyond 1e12
    hi = 1e12
    body = log_trapezoid(lambda l: (1 - np.exp(-l)) / (l * l + l) * np.sqrt(l), 1e-12, hi)
    tr = (body + 2.0 / math.sqrt(hi)) / math.gamma(1.5)
    assert mean_extinction_time(quad, 1.0) == pytest.approx(tr, rel=1e-5)


def test_supercritical_restricted_means(supercritical):
    assert mean_extinction_time(supercritical, 1.0) == pytest.approx(V2_SUPER_EXTINCTION, rel=1e-8)
    assert mean_explosion_time(supercritical, 1.0) == pytest.approx(V2_SUPER_EXPLOSION, rel=1e-8)


def test_two_sided_quadratic(quad):
    assert mean_two_sided(quad, 2.0, 1.0) == pytest.approx(V4_QUAD_TWO_SIDED, rel=1e-8)
    assert mean_two_sided(quad, 2.0, 2.0) == 0.0


def test_two_sided_reduces_to_hit_time(quad):
    for x, y in [(2.0, 1.0), (5.0, 0.5), (1.0, 0.0)]:
        assert mean_two_sided(quad, x, y) == pytest.approx(mean_hit_time(quad, x, y), rel=1e-9)


def test_explosion_time_zero_when_q_zero(quad):
    assert mean_explosion_time(quad, 1.0) == 0.0


def test_zero_start():
    m = Mechanism.make(b=1.0, c=1.0, theta=1.5)
    assert mean_extinction_time(m, 0.0) == 0.0
    assert mean_absorption_time(m, 0.0) == 0.0
    assert mean_extinction_time(m, 1e-8) < 1e-3


def test_stable_theta_one_absorption_is_finite():
    # int_0^inf (1 - e^-l) l^-1.5 dl = Gamma(0.5) / 0.5 = 2 sqrt(pi)
    assert mean_absorption_time(_stable(1.0), 1.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-8)


def test_theta_two_extinction_integral_still_returned():
    m = Mechanism.make(b=1.0, c=1.0, theta=2.0)
    assert classify(m).extinction == "impossible"
    assert mean_extinction_time(m, 1.0) == math.inf


def test_from_infinity_closed_form(quad):
    assert mean_hit_from_infinity(quad, 0.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-8)
    oracle = mp_integral(lambda l: l ** 0.5 / (l * l + l)) / math.gamma(1.5)
    assert mean_hit_from_infinity(quad, 0.0) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("theta,finite", [(0.8, False), (1.0, False), (1.5, True), (1.9, True),
                                          (2.0, False), (2.5, False)])
def test_from_infinity_finiteness(theta, finite):
    m = Mechanism.make(b=1.0, c=1.0, theta=theta)
    assert math.isfinite(mean_hit_from_infinity(m, 0.0)) == finite


def test_from_infinity_theta_one_any_level():
    m = Mechanism.make(b=1.0, c=1.0, theta=1.0)
    for y in (0.1, 1.0, 10.0):
        assert mean_hit_from_infinity(m, y) == math.inf


def test_from_infinity_large_level_vanishes(quad):
    vals = [mean_hit_from_infinity(quad, y) for y in (1.0, 10.0, 100.0, 1000.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.1


def test_from_infinity_requires_hypotheses(supercritical):
    with pytest.raises(ValueError):
        mean_hit_from_infinity(supercritical, 1.0)


def test_from_infinity_bounds_hit_time(quad):
    for x in (2.0, 8.0, 64.0):
        assert mean_hit_time(quad, x, 1.0) < mean_hit_from_infinity(quad, 1.0)


def test_conditional_extinction(supercritical):
    assert conditional_extinction_time(supercritical, 1.0) == pytest.approx(V2_SUPER_EXTINCTION * math.e,
                                                                          rel=1e-8)


def _family(draw_b, draw_c, draw_a, theta):
    return Mechanism.make(a=draw_a, b=draw_b, c=draw_c, theta=theta)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.2, 2.0), st.floats(0.0, 1.0), st.floats(1.1, 1.9), st.floats(0.2, 3.0))
def test_additivity(b, c, a, theta, x):
    m = _family(b, c, a, theta)
    e0 = mean_extinction_time(m, x, full=True)
    ei = mean_explosion_time(m, x, full=True)
    ea = mean_absorption_time(m, x, full=True)
    tol = max(e0.abs_error + ei.abs_error + ea.abs_error, 1e-8 * ea.value)
    assert abs(e0.value + ei.value - ea.value) <= 3 * tol


def test_two_sided_monotone(quad, supercritical):
    ys = [0.1, 0.5, 1.0, 1.5]
    for m in (quad, supercritical):
        vals = [mean_two_sided(m, 2.0, y) for y in ys]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    # increasing in x only without explosion: a larger start explodes sooner
    xs = [1.5, 2.0, 3.0, 5.0]
    vals = [mean_two_sided(quad, x, 1.0) for x in xs]
    assert all(a < b for a, b in zip(vals, vals[1:]))


# -- h_x kernel -------------------------------------------------------------


@pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
def test_hx_continuity_at_q(supercritical, x):
    h = HxKernel(supercritical, x)
    q = supercritical.q
    target = x * math.exp(-q * x) / supercritical.psi_prime(q)
    assert float(h(np.array([q]))[0]) == pytest.approx(target, rel=1e-12)
    prev = None
    for d in (1e-4, 1e-6):
        err = max(abs(float(h(np.array([q + s * d]))[0]) - target) for s in (-1, 1))
        assert err < 10 * d
        if prev is not None:
            assert err < prev
        prev = err


def test_hx_nonnegative_above_q(supercritical):
    q = supercritical.q
    lam = q + np.logspace(-8, 4, 200)
    assert np.all(HxKernel(supercritical, 1.5)(lam) >= 0)


def test_kernel_table_csv(quad):
    rows = kernel_table(quad, 1.0, [0.5, 1.0, 2.0])
    text = table_to_csv(rows)
    assert text.splitlines()[0] == "lambda,psi,h_x,integrand"
    assert len(text.splitlines()) == 4


# -- classification ---------------------------------------------------------


def test_classify_examples():
    assert classify(Mechanism.make(b=1.0, c=1.0, theta=2.0)).extinction == "impossible"
    r = classify(Mechanism.make(b=-1.0, c=1.0, theta=1.5), x=2.0)
    assert r.extinction == "possible"
    assert r.prob_extinction == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert classify(Mechanism.make(b=-1.0, c=1.0, theta=0.5)).explosion == "impossible"
    r = classify(Mechanism.make(b=-1.0, c=1.0, theta=1.5), x=1.0)
    assert r.explosion == "possible"
    assert r.prob_explosion == pytest.approx(1 - math.exp(-1.0), rel=1e-14)
    assert classify(_stable(2.0)).comes_down_from_infinity == "yes"
    assert classify(Mechanism.make(b=1.0, c=1.0, theta=1.0)).comes_down_from_infinity == "no"


def test_classify_not_applicable(supercritical):
    assert classify(supercritical).comes_down_from_infinity == "not applicable"
    killed = Mechanism.make(a=0.5, b=1.0, c=1.0, theta=1.5)
    r = classify(killed)
    assert r.comes_down_from_infinity == "not applicable"
    assert r.explosion == "possible"


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-2.0, 2.0), st.floats(0.1, 2.0), st.floats(0.3, 3.0))
def test_limit_law_matches(x, b, c, theta):
    m = Mechanism.make(b=b, c=c, theta=theta)
    r = classify(m, x)
    assert r.prob_extinct_limit == hit_prob(m, x, 0.0)
    assert r.prob_extinct_limit + r.prob_explode_limit == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("theta", [0.5, 1.0, 1.5, 1.9, 2.0, 3.0])
def test_extinction_verdict_matches_moment_finiteness(theta):
    m = Mechanism.make(b=1.0, c=1.0, theta=theta)
    possible = classify(m).extinction == "possible"
    assert possible == (theta < 2.0)
    assert math.isfinite(mean_extinction_time(m, 1.0)) == possible


def test_report_serialization(supercritical):
    r = classify(supercritical)
    d = r.as_dict()
    assert d["explosion"] == "possible"
    assert "extinction_tail_test" in d["evidence"]
    assert '"explosion": "possible"' in r.to_json(sort_keys=True)
    assert "explosion" in r.pretty()
