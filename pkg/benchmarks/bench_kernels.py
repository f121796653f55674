"""Compare the compiled and pure-Python simulation kernels.

Each workload runs on both backends with the same seed; the outputs must be
bit-identical, and the table reports wall time per path and the speedup.

    python3 benchmarks/bench_kernels.py --paths 200
"""
import argparse
import time

import numpy as np

from polybranch import _backend
from polybranch.discrete import build_approx_sequence
from polybranch.mechanism import Mechanism
from polybranch.simulate import kernel_params


def _euler(mech, x0, n_paths, backend):
    params = kernel_params(mech, mech.theta, 1e-3, 1e3, 2.0, 1e-3)
    return _backend.run_euler(params, x0, n_paths, 1, obs_t=[1.0], threads=1, backend=backend)


def _gillespie(spec, n_paths, backend):
    return _backend.run_gillespie(spec.n, spec.theta, spec.alpha_rate * spec.gamma_n, spec.offspring.ks,
                                  spec.offspring.cumulative(), 1.0, n_paths, 1, obs_t=[1.0], threads=1,
                                  backend=backend)


def workloads():
    quad = Mechanism.make(b=1.0, c=1.0, theta=1.5)
    jumps = Mechanism.make(b=1.0, c=0.5, atoms=[(0.3, 2.0), (1.5, 0.5)], stable=(1.5, 0.4), theta=1.2)
    chain = build_approx_sequence(quad, 50)
    return [
        ("euler quadratic", lambda n, be: _euler(quad, [1.0], n, be)),
        ("euler jumps", lambda n, be: _euler(jumps, [1.0], n, be)),
        ("euler coupled x4", lambda n, be: _euler(quad, [1.0, 2.0, 4.0, 8.0], n, be)),
        ("gillespie n=50", lambda n, be: _gillespie(chain, n, be)),
    ]


def identical(a, b):
    return all(np.array_equal(a[k], b[k], equal_nan=a[k].dtype.kind == "f") for k in a)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100)
    args = ap.parse_args()
    if _backend.get_kernels().BACKEND != "cython":
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'workload':<20}{'python s/path':>15}{'cython s/path':>15}{'speedup':>10}{'identical':>11}")
    for name, run in workloads():
        t = time.perf_counter()
        py = run(args.paths, "python")
        t_py = (time.perf_counter() - t) / args.paths
        t = time.perf_counter()
        cy = run(args.paths, "cython")
        t_cy = (time.perf_counter() - t) / args.paths
        print(f"{name:<20}{t_py:>15.3e}{t_cy:>15.3e}{t_py / t_cy:>10.1f}{str(identical(py, cy)):>11}")


if __name__ == "__main__":
    main()
