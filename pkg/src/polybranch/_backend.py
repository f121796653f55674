"""Kernel backend selection and path-parallel drivers.

The compiled extension is used when it imports; otherwise, or when
``POLYBRANCH_BACKEND=python``, the pure-Python kernels are used.  Both give
bit-identical results, and results never depend on the thread count
because every path owns its random stream and writes its own output row.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("POLYBRANCH_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None

__all__ = ["get_kernels", "backend_name", "default_threads", "run_euler", "run_gillespie", "record_euler",
           "uniforms"]


def get_kernels(name: str | None = None):
    """Return the kernel module: ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def backend_name() -> str:
    return get_kernels().BACKEND


def default_threads() -> int:
    env = os.environ.get("POLYBRANCH_THREADS")
    if env:
        return max(1, int(env))
    return 1


def uniforms(seed: int, path: int, n: int, backend: str | None = None) -> np.ndarray:
    return get_kernels(backend).uniforms(seed, path, n)


def _chunks(n, threads):
    threads = max(1, min(threads, n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel(fn, n_paths, threads):
    chunks = _chunks(n_paths, threads)
    if len(chunks) <= 1:
        for a, b in chunks:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
        list(ex.map(lambda ab: fn(*ab), chunks))


def run_euler(params: dict, x0, n_paths: int, seed: int, obs_t=(), threads: int | None = None,
              backend: str | None = None, path_offset: int = 0) -> dict:
    """Run the Euler kernel for ``n_paths`` paths; returns arrays indexed (path, level[, obs])."""
    kern = get_kernels(backend)
    x0 = np.ascontiguousarray(np.atleast_1d(x0), dtype=np.float64)
    obs_t = np.ascontiguousarray(obs_t, dtype=np.float64)
    K, nobs = len(x0), len(obs_t)
    out = {
        "t_low": np.empty((n_paths, K)),
        "t_high": np.empty((n_paths, K)),
        "killed": np.zeros((n_paths, K), dtype=np.int8),
        "t_hit": np.empty((n_paths, K)),
        "x_fin": np.empty((n_paths, K)),
        "obs": np.empty((n_paths, K, nobs)),
        "t_end": np.empty(n_paths),
        "substeps": np.zeros(n_paths, dtype=np.int64),
        "clips": np.zeros(n_paths, dtype=np.int64),
        "capped": np.zeros(n_paths, dtype=np.int8),
    }

    def work(a, b):
        sl = slice(a, b)
        kern.euler_batch(params, x0, obs_t, seed, path_offset + a, path_offset + b,
                         out["t_low"][sl], out["t_high"][sl], out["killed"][sl], out["t_hit"][sl],
                         out["x_fin"][sl], out["obs"][sl], out["t_end"][sl], out["substeps"][sl],
                         out["clips"][sl], out["capped"][sl])

    _parallel(work, n_paths, default_threads() if threads is None else threads)
    return out


def record_euler(params: dict, x0, seed: int, path: int = 0, obs_t=(), backend: str | None = None):
    """Simulate one path and return its substep skeleton together with the summary outputs."""
    kern = get_kernels(backend)
    x0 = np.ascontiguousarray(np.atleast_1d(x0), dtype=np.float64)
    obs_t = np.ascontiguousarray(obs_t, dtype=np.float64)
    K, nobs = len(x0), len(obs_t)
    capacity = 1 << 14
    while True:
        out = {
            "t_low": np.empty((1, K)), "t_high": np.empty((1, K)), "killed": np.zeros((1, K), dtype=np.int8),
            "t_hit": np.empty((1, K)), "x_fin": np.empty((1, K)), "obs": np.empty((1, K, nobs)),
            "t_end": np.empty(1), "substeps": np.zeros(1, dtype=np.int64), "clips": np.zeros(1, dtype=np.int64),
            "capped": np.zeros(1, dtype=np.int8),
        }
        rec = {"capacity": capacity, "t": [], "x": [], "jump": []}
        kern.euler_batch(params, x0, obs_t, seed, path, path + 1, out["t_low"], out["t_high"], out["killed"],
                         out["t_hit"], out["x_fin"], out["obs"], out["t_end"], out["substeps"], out["clips"],
                         out["capped"], record=rec)
        if rec.get("overflow"):
            capacity *= 4
            continue
        rec["t"] = np.asarray(rec["t"], dtype=float)
        rec["x"] = np.asarray(rec["x"], dtype=float).reshape(len(rec["t"]), K)
        rec["jump"] = np.asarray(rec["jump"], dtype=float)
        return {k: v[0] for k, v in out.items()}, rec


def run_gillespie(i0: int, theta: float, rate_scale: float, ks, cum, horizon: float, n_paths: int, seed: int,
                  obs_t=(), i_cap: int = 1 << 60, max_events: int = 10**8, threads: int | None = None,
                  backend: str | None = None) -> dict:
    kern = get_kernels(backend)
    obs_t = np.ascontiguousarray(obs_t, dtype=np.float64)
    ks = np.ascontiguousarray(ks, dtype=np.int64)
    cum = np.ascontiguousarray(cum, dtype=np.float64)
    horizon = float(horizon) if math.isfinite(horizon) else math.inf
    out = {
        "t0": np.empty(n_paths),
        "tinf": np.empty(n_paths),
        "events": np.zeros(n_paths, dtype=np.int64),
        "capped": np.zeros(n_paths, dtype=np.int8),
        "i_fin": np.zeros(n_paths, dtype=np.int64),
        "obs": np.zeros((n_paths, len(obs_t)), dtype=np.int64),
    }

    def work(a, b):
        sl = slice(a, b)
        kern.gillespie_batch(int(i0), float(theta), float(rate_scale), ks, cum, horizon, obs_t, seed, a, b,
                             int(i_cap), int(max_events), out["t0"][sl], out["tinf"][sl], out["events"][sl],
                             out["capped"][sl], out["i_fin"][sl], out["obs"][sl])

    _parallel(work, n_paths, default_threads() if threads is None else threads)
    return out
