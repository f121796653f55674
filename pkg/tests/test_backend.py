import math

import numpy as np
import pytest
from scipy import stats

from polybranch import _backend, _kernels_py
from polybranch.discrete import build_approx_sequence
from polybranch.mechanism import Mechanism
from polybranch.simulate import kernel_params

from .conftest import requires_compiled


def _same(a, b):
    for k in a:
        assert np.array_equal(a[k], b[k], equal_nan=a[k].dtype.kind == "f"), k


def _euler(mech, x0, n_paths, backend, **kw):
    params = kernel_params(mech, mech.theta, 1e-3, 1e3, 2.0, 1e-3, **kw)
    return _backend.run_euler(params, x0, n_paths, 1, obs_t=[0.5, 1.0], threads=1, backend=backend)


def test_mix64_reference():
    # SplitMix64 finalizer applied to golden-ratio increments, seed 0
    z = 0
    outs = []
    for _ in range(3):
        z = (z + 0x9E3779B97F4A7C15) & _kernels_py.MASK
        outs.append(_kernels_py.mix64(z))
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_uniforms_open_interval_and_uniform():
    u = _backend.uniforms(3, 0, 20_000, backend="python")
    assert np.all((u > 0) & (u < 1))
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_streams_differ_by_path_and_seed():
    a = _backend.uniforms(1, 0, 100, backend="python")
    assert not np.array_equal(a, _backend.uniforms(1, 1, 100, backend="python"))
    assert not np.array_equal(a, _backend.uniforms(2, 0, 100, backend="python"))


@requires_compiled
def test_uniforms_identical():
    assert np.array_equal(_backend.uniforms(7, 3, 1000, backend="python"),
                          _backend.uniforms(7, 3, 1000, backend="cython"))


@requires_compiled
@pytest.mark.parametrize("mech", [
    Mechanism.make(b=1.0, c=1.0, theta=1.5),
    Mechanism.make(a=0.3, b=-1.0, c=0.5, atoms=[(0.3, 2.0), (1.5, 0.5)], stable=(1.5, 0.4), theta=1.2),
], ids=["quadratic", "jumps"])
def test_euler_identical(mech):
    _same(_euler(mech, [1.0], 20, "python"), _euler(mech, [1.0], 20, "cython"))
    _same(_euler(mech, [0.5, 1.0, 2.0], 8, "python"), _euler(mech, [0.5, 1.0, 2.0], 8, "cython"))


@requires_compiled
def test_euler_identical_with_stops():
    mech = Mechanism.make(b=1.0, c=1.0, theta=1.5)
    kw = dict(hit_y=0.5, stop_on_hit=True)
    _same(_euler(mech, [1.0, 2.0], 10, "python", **kw), _euler(mech, [1.0, 2.0], 10, "cython", **kw))
    kw = dict(clock_theta=1.5, clock_stop=0.3)
    _same(_euler(mech, [1.0], 10, "python", **kw), _euler(mech, [1.0], 10, "cython", **kw))


@requires_compiled
def test_record_identical():
    mech = Mechanism.make(b=1.0, c=0.5, atoms=[(0.7, 1.0)], theta=1.5)
    params = kernel_params(mech, mech.theta, 1e-3, 1e3, 1.0, 1e-2)
    s1, r1 = _backend.record_euler(params, [1.0], 4, backend="python")
    s2, r2 = _backend.record_euler(params, [1.0], 4, backend="cython")
    _same(s1, s2)
    for k in ("t", "x", "jump"):
        assert np.array_equal(r1[k], r2[k])


@requires_compiled
def test_gillespie_identical():
    spec = build_approx_sequence(Mechanism.make(b=1.0, c=1.0, theta=1.5), 50)
    outs = [_backend.run_gillespie(spec.n, spec.theta, spec.alpha_rate * spec.gamma_n, spec.offspring.ks,
                                   spec.offspring.cumulative(), 1.0, 30, 2, obs_t=[0.5, 1.0], threads=1,
                                   backend=be) for be in ("python", "cython")]
    _same(*outs)


def test_threads_invariance():
    mech = Mechanism.make(b=1.0, c=1.0, theta=1.5)
    params = kernel_params(mech, mech.theta, 1e-3, 1e3, 1.0, 1e-2)
    a = _backend.run_euler(params, [1.0], 16, 5, obs_t=[0.5], threads=1)
    b = _backend.run_euler(params, [1.0], 16, 5, obs_t=[0.5], threads=3)
    _same(a, b)


def test_default_threads(monkeypatch):
    monkeypatch.delenv("POLYBRANCH_THREADS", raising=False)
    assert _backend.default_threads() == 1
    monkeypatch.setenv("POLYBRANCH_THREADS", "4")
    assert _backend.default_threads() == 4


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.get_kernels("fortran")
    assert _backend.get_kernels("python").BACKEND == "python"
    assert math.isfinite(_backend.uniforms(0, 0, 1)[0])
