import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polybranch.discrete import (
    ChainSpec,
    OffspringLaw,
    build_approx_sequence,
    chain_spec_from_dict,
    chain_spec_to_dict,
    generating_function,
    gillespie,
    gillespie_batch,
    ks_decreasing,
    ks_two_sample,
    phi_n,
    psi_n,
    q_matrix_row,
    rescaled_marginal,
)
from polybranch.mechanism import Mechanism, stable_scale_for_unit_power

EPS = np.finfo(float).eps
LAM = np.linspace(0.5, 2.0, 16)


def _atoms_mech():
    return Mechanism.make(a=0.3, b=0.5, c=0.2, atoms=[(0.3, 1.0), (2.0, 0.5)], theta=1.5)


def _stable_mech():
    scale, b = stable_scale_for_unit_power(1.5)
    return Mechanism.make(b=b, stable=(1.5, scale), theta=1.5)


# -- offspring laws and Q-matrix rows -----------------------------------------


def test_q_row_examples():
    spec = ChainSpec(OffspringLaw((0, 2), (0.5, 0.5)), theta=2.0)
    row = q_matrix_row(spec, 3)
    assert row == {2: 4.5, 4: 4.5}
    assert sum(row.values()) == spec.rate(3) == 9.0
    assert q_matrix_row(spec, 0) == {}
    death = ChainSpec(OffspringLaw((0,), (1.0,)), theta=1.0, alpha_rate=0.7)
    assert q_matrix_row(death, 5) == {4: pytest.approx(3.5)}


def test_q_row_to_infinity():
    spec = ChainSpec(OffspringLaw((0, 3), (0.3, 0.5)), theta=1.0)
    row = q_matrix_row(spec, 2)
    assert row[math.inf] == pytest.approx(2 * 0.2)
    assert math.fsum(row.values()) == pytest.approx(spec.rate(2), rel=1e-15)


def test_offspring_law_invariants():
    with pytest.raises(ValueError):
        OffspringLaw((0, 1), (0.5, 0.5))
    with pytest.raises(ValueError):
        OffspringLaw((0, 2), (0.7, 0.7))
    with pytest.raises(ValueError):
        OffspringLaw((0, 2), (-0.1, 0.5))
    law = OffspringLaw.from_dict({0: 0.25, 3: 0.5})
    assert law.b_inf == pytest.approx(0.25)
    assert law.prob(1) == 0.0


@pytest.mark.parametrize("n", [10, 100, 1000])
@pytest.mark.parametrize("mech", [_atoms_mech(), _stable_mech(), Mechanism.make(b=1.0, c=1.0, theta=1.5)])
def test_built_law_invariants(mech, n):
    spec = build_approx_sequence(mech, n, max_children=10**4)
    law = spec.offspring
    assert 1 not in law.ks
    assert all(p >= 0 for p in law.probs)
    assert law.total <= 1.0 + 1e-12
    for i in (1, 2, 7):
        row = q_matrix_row(spec, i)
        finite = math.fsum(v for k, v in row.items() if k != math.inf)
        assert finite <= spec.rate(i) * (1 + 1e-12)
        if law.b_inf == 0.0:
            assert finite == pytest.approx(spec.rate(i), rel=1e-12)


# -- generating functions ---------------------------------------------------


def test_degenerate_generating_function():
    # g(s) = s is not representable with b_1 = 0; the empty law with no mass to infinity
    # has g = 0, so phi and psi reduce to -gamma s
    law = OffspringLaw((), ())
    assert np.allclose(generating_function(law, [0.2, 0.9]), 0.0)


def test_killing_block():
    m = Mechanism.make(a=1.0, check_assumption=False)
    for n in (10, 100, 1000):
        spec = build_approx_sequence(m, n)
        lam = np.linspace(0, n, 11)
        got = psi_n(spec.offspring, spec.gamma_n, n, lam)
        assert np.allclose(got, -1.0 * (1 - lam / n), rtol=0, atol=1e-15)
    assert psi_n(spec.offspring, spec.gamma_n, 1000, 1.0) == pytest.approx(-1.0, abs=2e-3)


def test_diffusion_block_exact():
    m = Mechanism.make(c=1.0, theta=1.5)
    for n in (10, 100, 1000):
        spec = build_approx_sequence(m, n)
        got = psi_n(spec.offspring, spec.gamma_n, n, LAM)
        assert np.allclose(got, LAM**2, rtol=1e-10)


@pytest.mark.parametrize("mech", [_atoms_mech(), _stable_mech(), Mechanism.make(b=1.0, c=1.0, theta=1.5)])
@pytest.mark.parametrize("n", [100, 1000, 10000])
def test_two_code_paths_agree(mech, n):
    spec = build_approx_sequence(mech, n, max_children=10**5)
    law, g = spec.offspring, spec.gamma_n
    for f in (psi_n, phi_n):
        a = f(law, g, n, LAM)
        b = f(law, g, n, LAM, direct=True)
        # both are gamma_n times a sum of len(ks) terms of size O(1): worst-case rounding bound
        assert np.max(np.abs(a - b)) <= (8 + len(law.ks)) * EPS * g


def test_psi_n_domain():
    spec = build_approx_sequence(_atoms_mech(), 10)
    with pytest.raises(ValueError):
        psi_n(spec.offspring, spec.gamma_n, 10, 11.0)


@pytest.mark.parametrize("mech", [_atoms_mech(), _stable_mech(), Mechanism.make(b=1.0, c=1.0, theta=1.5)])
def test_psi_minus_phi_decreasing(mech):
    gaps = []
    for n in (100, 1000, 10000):
        spec = build_approx_sequence(mech, n, max_children=10**5)
        d = psi_n(spec.offspring, spec.gamma_n, n, LAM) - phi_n(spec.offspring, spec.gamma_n, n, LAM)
        gaps.append(np.max(np.abs(d)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_convergence_schedule_finite_measure():
    # drift and diffusion are exact; atoms and killing leave an O(1/n) error
    m = _atoms_mech()
    errs = []
    for n in (100, 1000, 10000):
        spec = build_approx_sequence(m, n)
        errs.append(np.max(np.abs(psi_n(spec.offspring, spec.gamma_n, n, LAM) - m.psi(LAM))))
    for n, e in zip((100, 1000, 10000), errs):
        assert e <= 2.0 / n
    assert errs[0] / errs[2] > 50


def test_convergence_schedule_stable():
    # the lattice compensation carries variance of order n^(alpha - 2)
    m = _stable_mech()
    errs = []
    for n in (100, 1000, 10000):
        spec = build_approx_sequence(m, n, max_children=10**5)
        errs.append(np.max(np.abs(psi_n(spec.offspring, spec.gamma_n, n, LAM) - m.psi(LAM))))
    for n, e in zip((100, 1000, 10000), errs):
        assert e <= 3.0 * n ** (1.5 - 2.0)
    assert errs[0] > errs[1] > errs[2]


def test_quadratic_exact():
    m = Mechanism.make(b=1.0, c=1.0, theta=1.5)
    spec = build_approx_sequence(m, 500)
    assert np.allclose(psi_n(spec.offspring, spec.gamma_n, 500, LAM), m.psi(LAM), rtol=1e-10)
    assert spec.alpha_rate == 500.0 ** -1.5


# -- Gillespie --------------------------------------------------------------


def test_pure_death_harmonic():
    spec = ChainSpec(OffspringLaw((0,), (1.0,)), theta=1.0, alpha_rate=0.5)
    k, n = 10, 20_000
    out = gillespie_batch(spec, k, math.inf, n, seed=3)
    t0 = out["t0"]
    mean = sum(1.0 / (0.5 * j) for j in range(1, k + 1))
    var = sum(1.0 / (0.5 * j) ** 2 for j in range(1, k + 1))
    assert abs(t0.mean() - mean) < 3 * math.sqrt(var / n)


def test_single_path_matches_batch():
    spec = build_approx_sequence(Mechanism.make(b=1.0, c=1.0, theta=1.5), 20)
    p = gillespie(spec, 20, 0.05, seed=9, path=4)
    out = gillespie_batch(spec, 20, 0.05, 6, seed=9)
    assert p.t0 == out["t0"][4]
    assert p.states[-1] == out["i_fin"][4] or p.states[-1] == -1


def test_zero_start():
    spec = ChainSpec(OffspringLaw((0, 2), (0.5, 0.5)), theta=1.0)
    p = gillespie(spec, 0, 10.0, seed=0)
    assert np.all(p.states == 0)
    assert p.t0 == 0.0


def _explosion_probs(law, cap=400):
    """First-step analysis of P_i(reach inf) on states 1..cap-1 with p = 1 beyond."""
    a = np.eye(cap - 1)
    rhs = np.full(cap - 1, law.b_inf)
    for i in range(1, cap):
        for k, p in zip(law.ks, law.probs):
            j = i + k - 1
            if j == 0:
                continue
            if j >= cap:
                rhs[i - 1] += p
            else:
                a[i - 1, j - 1] -= p
    return np.linalg.solve(a, rhs)


def test_explosion_probability_linear_system():
    law = OffspringLaw((0, 3), (0.45, 0.45))
    spec = ChainSpec(law, theta=1.0)
    probs = _explosion_probs(law)
    n = 20_000
    for i0 in (1, 2, 5):
        out = gillespie_batch(spec, i0, math.inf, n, seed=i0, i_cap=10**6)
        hit = np.mean(np.isfinite(out["tinf"]) | (out["capped"] == 1))
        p = probs[i0 - 1]
        assert abs(hit - p) < 3 * math.sqrt(p * (1 - p) / n) + 1e-3


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 20))
def test_linear_system_is_consistent(p0, frac, i):
    law = OffspringLaw((0, 2), (p0 * (1 - 1e-3), (1 - p0) * frac * (1 - 1e-3)))
    probs = _explosion_probs(law, cap=200)
    assert np.all(probs >= -1e-12) and np.all(probs <= 1 + 1e-12)
    assert np.all(np.diff(probs) >= -1e-12)


# -- rescaling --------------------------------------------------------------


def test_rescaled_time_zero():
    spec = build_approx_sequence(Mechanism.make(b=1.0, c=1.0, theta=1.5), 50)
    cdf = rescaled_marginal(spec, 1.04, 0.0, 100, seed=0)
    assert np.all(cdf.values == 52 / 50)


def test_pure_death_law_of_large_numbers():
    # chain built from a pure drift: rescaled extinction time -> int_0^x0 u^-theta du / b
    b, theta, x0 = 2.0, 0.5, 1.0
    m = Mechanism.make(b=b, theta=theta)
    target = x0 ** (1 - theta) / (b * (1 - theta))
    spreads, means = [], []
    for n in (50, 500, 5000):
        spec = build_approx_sequence(m, n)
        i0 = int(n * x0)
        out = gillespie_batch(spec, i0, math.inf, 400, seed=n, time_scale=spec.gamma_n)
        t0 = out["t0"]
        # exact mean of the sum of exponential holding times
        rates = [spec.gamma_n * spec.rate(i) * spec.offspring.prob(0) for i in range(1, i0 + 1)]
        mean = math.fsum(1.0 / r for r in rates)
        assert abs(t0.mean() - mean) < 3 * t0.std(ddof=1) / math.sqrt(len(t0))
        means.append(mean)
        spreads.append(t0.std())
    assert spreads[0] > spreads[1] > spreads[2]
    errs = [abs(v - target) for v in means]
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 0.02


def test_ks_helpers():
    a = np.array([0.0, 1.0, 2.0, math.inf])
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample([0.0, 0.0], [1.0, 1.0]) == 1.0
    rows = [{"ks": 0.1, "ks_noise": 0.02}, {"ks": 0.11, "ks_noise": 0.02}, {"ks": 0.05, "ks_noise": 0.02}]
    assert ks_decreasing(rows)
    assert not ks_decreasing(rows, slack=0.0)


def test_chain_spec_round_trip(tmp_path):
    spec = build_approx_sequence(_atoms_mech(), 20)
    d = chain_spec_to_dict(spec)
    back = chain_spec_from_dict(json.loads(json.dumps(d)))
    assert back == spec
    assert back.offspring.b_inf == pytest.approx(spec.offspring.b_inf, abs=1e-15)


def test_empirical_cdf_csv():
    spec = build_approx_sequence(Mechanism.make(b=-1.0, c=1.0, theta=1.5), 20)
    cdf = rescaled_marginal(spec, 1.0, 0.5, 200, seed=1)
    lines = cdf.to_csv().splitlines()
    assert lines[0] == "value,cumprob"
    assert float(lines[-1].split(",")[1]) == 1.0
