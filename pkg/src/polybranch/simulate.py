"""Path simulation.

Two routes produce branching paths:

* an absorbed spectrally positive Levy path ``Y`` (Euler composition, or an
  exact event-driven sampler for finite jump measures without drift or
  diffusion) followed by the random time change ``X_t = Y(eta(t))`` with
  ``eta`` the inverse of ``int_0^. Y_s^(-theta) ds``;
* the jump SDE ``dX = X^theta(-b dt) + sqrt(2c X^theta) dB + jumps thinned
  at rate X^theta`` integrated directly by an Euler scheme with dyadic
  relative-step refinement.

States 0 and ``inf`` are traps.  Paths are stopped when they leave
``(1/n, n)``; whether leaving counts as *reaching* the boundary in finite
time is decided by the integral tests of :func:`polybranch.analytics.classify`,
otherwise the hitting time is reported as ``inf`` and the boundary as the
limit of the path.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._backend import record_euler, run_euler
from ._kernels_py import Stream
from .mechanism import Mechanism

__all__ = [
    "DEFAULT_NMAX",
    "DEFAULT_DELTA_J",
    "LevyPath",
    "PathSample",
    "kernel_params",
    "default_rel_step",
    "boundary_reachability",
    "sample_levy_path",
    "sample_compound_poisson",
    "inverse_lamperti",
    "forward_lamperti",
    "euler_sde",
    "coupled_pair",
    "approx_from_infinity",
    "euler_marginal",
    "roundtrip_check",
    "paths_to_csv",
]

DEFAULT_NMAX = 2.0**20
DEFAULT_DELTA_J = 1e-3


@dataclass
class LevyPath:
    """Cadlag step skeleton: value ``states[i]`` holds on ``[grid[i], grid[i+1])``.

    ``absorbed_at`` is ``("zero", t)``, ``("infinity", t)`` or ``None``
    (censored at ``horizon``).  ``jumps`` lists ``(time, size)`` of every
    positive jump; a killing jump has size ``inf``.
    """

    grid: np.ndarray
    states: np.ndarray
    jumps: list
    absorbed_at: tuple | None
    killed: bool
    horizon: float
    mech: Mechanism | None = None
    exact: bool = False
    seed: int | None = None
    slope: float = 0.0  # linear drift between grid points (exact paths); 0 for step skeletons


@dataclass
class PathSample:
    grid: np.ndarray
    states: np.ndarray
    tau0: float
    tauInf: float
    tau: float
    scheme: str
    seed: int | None
    truncation: tuple[float, float]
    horizon: float
    limit: str | None = None  # "zero" / "infinity" when the path tends to a boundary it never reaches
    censored: bool = False
    meta: dict = field(default_factory=dict)

    def value_at(self, t: float) -> float:
        i = max(int(np.searchsorted(self.grid, t, side="right")) - 1, 0)
        slope = self.meta.get("slope", 0.0)
        if slope != 0.0:
            return _ode_value(float(self.states[i]), slope, t - float(self.grid[i]), self.meta["theta"])
        return float(self.states[i])


# ---------------------------------------------------------------------------
# kernel plumbing


def default_rel_step(dt: float) -> float:
    """Relative-step bound tied to ``dt`` so that refining dt refines every regime."""
    return min(0.1, math.sqrt(dt))


def kernel_params(mech: Mechanism, theta: float, lo: float, hi: float, horizon: float, dt: float,
                  rel_step: float | None = None, delta_j: float = DEFAULT_DELTA_J, hit_y: float = -1.0,
                  stop_on_hit: bool = False, max_substeps: int = 10**9, clock_theta: float = 0.0,
                  clock_stop: float = math.inf) -> dict:
    """Split the Levy measure at ``delta_j`` into a Gaussian part and a Poisson part.

    ``clock_stop`` ends the first path once the left-point sum of
    ``x^(-clock_theta) h`` over substeps reaches it.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if not 0 < delta_j <= 1:
        raise ValueError("small-jump cutoff must lie in (0, 1]")
    m = mech.measure
    drift = -mech.b
    var = 2.0 * mech.c
    az, aw = [], []
    for z, w in m.atoms:
        if z <= delta_j:
            var += w * z * z
        else:
            if z <= 1.0:
                drift -= w * z
            az.append(z)
            aw.append(w)
    st_alpha, st_mass = 1.0, 0.0
    if m.stable is not None:
        st_alpha, scale = m.stable
        var += scale * delta_j ** (2.0 - st_alpha) / (2.0 - st_alpha)
        if st_alpha == 1.0:
            drift -= scale * math.log(1.0 / delta_j)
        else:
            drift -= scale * (1.0 - delta_j ** (1.0 - st_alpha)) / (1.0 - st_alpha)
        st_mass = scale * delta_j ** (-st_alpha) / st_alpha
    lam_tot = sum(aw) + st_mass + mech.a
    return {
        "theta": float(theta),
        "drift": drift,
        "var": var,
        "lo": float(lo),
        "hi": float(hi),
        "horizon": float(horizon),
        "dt": float(dt),
        "rel_step": default_rel_step(dt) if rel_step is None else float(rel_step),
        "atom_z": np.array(az, dtype=float),
        "atom_w": np.array(aw, dtype=float),
        "st_alpha": float(st_alpha),
        "st_delta": float(delta_j),
        "st_mass": float(st_mass),
        "kill": float(mech.a),
        "lam_tot": float(lam_tot),
        "hit_y": float(hit_y),
        "stop_on_hit": bool(stop_on_hit),
        "max_substeps": int(max_substeps),
        "clock_theta": float(clock_theta),
        "clock_stop": float(clock_stop),
    }


@lru_cache(maxsize=256)
def boundary_reachability(mech: Mechanism) -> tuple[bool, bool]:
    """(0 reachable in finite time, inf reachable in finite time) by the integral tests."""
    from .analytics import classify

    rep = classify(mech, 1.0)
    return rep.extinction == "possible", rep.explosion == "possible"


def _label(mech, t_low, t_high, killed, horizon):
    can0, caninf = boundary_reachability(mech)
    tau0, tauinf, limit = math.inf, math.inf, None
    if t_low < math.inf:
        if can0:
            tau0 = t_low
        else:
            limit = "zero"
    if t_high < math.inf:
        if killed or caninf:
            tauinf = t_high
        else:
            limit = "infinity"
    censored = t_low == math.inf and t_high == math.inf
    return tau0, tauinf, limit, censored


# ---------------------------------------------------------------------------
# Levy paths


def _exact_applicable(mech: Mechanism) -> bool:
    m = mech.measure
    return mech.c == 0.0 and m.stable is None


def _path_slope(mech: Mechanism) -> float:
    """Drift of the Levy path between jumps: -b minus the compensator of jumps <= 1."""
    return -mech.b - sum(w * z for z, w in mech.measure.atoms if z <= 1.0)


def sample_compound_poisson(mech: Mechanism, x0: float, horizon: float, seed: int, path: int = 0) -> LevyPath:
    """Exact event-driven sampler when ``c = 0`` and the jump measure is finite.

    Between jumps the path is linear with slope ``-b - sum_(z<=1) w z``;
    passage through 0 happens on a linear piece and is located exactly.
    """
    if not _exact_applicable(mech):
        raise ValueError("exact sampling needs c = 0 and a finite jump measure")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    m = mech.measure
    slope = _path_slope(mech)
    sizes = [z for z, _ in m.atoms]
    weights = np.array([w for _, w in m.atoms] + [mech.a], dtype=float)
    lam = float(weights.sum())
    cum = np.cumsum(weights)
    rng = Stream(seed, path)
    t, y = 0.0, float(x0)
    grid, states, jumps = [0.0], [y], []
    if y <= 0.0:
        return LevyPath(np.array([0.0]), np.array([0.0]), [], ("zero", 0.0), False, horizon, mech, True, seed)
    absorbed, killed = None, False
    while True:
        gap = -math.log(rng.uniform()) / lam if lam > 0.0 else math.inf
        if slope < 0.0 and y + slope * gap <= 0.0 and t + y / -slope < horizon:
            t = t + y / -slope
            grid.append(t)
            states.append(0.0)
            absorbed = ("zero", t)
            break
        if t + gap >= horizon:
            break
        t = t + gap
        u = rng.uniform() * lam
        j = int(np.searchsorted(cum, u, side="right"))
        if j >= len(sizes):
            jumps.append((t, math.inf))
            y = math.inf
            killed = True
            absorbed = ("infinity", t)
        else:
            y = y + slope * gap + sizes[j]
            jumps.append((t, sizes[j]))
        grid.append(t)
        states.append(y)
        if absorbed is not None:
            break
    return LevyPath(np.array(grid), np.array(states), jumps, absorbed, killed, horizon, mech, True, seed, slope)


def sample_levy_path(mech: Mechanism, x0: float, horizon: float, dt: float, seed: int, path: int = 0,
                     delta_j: float = DEFAULT_DELTA_J, n_max: float = DEFAULT_NMAX, exact: bool | None = None,
                     rel_step: float | None = None, clock: tuple[float, float] | None = None,
                     backend: str | None = None) -> LevyPath:
    """Levy path started at ``x0``, absorbed at 0 (continuous passage) or at inf (killing / level n_max).

    ``exact=None`` uses the event-driven sampler whenever ``c = 0`` and the
    jump measure is finite; otherwise steps of ``dt`` compose drift,
    Gaussian part and Poisson jumps.  Steps are refined so that each moves
    the path by at most ``rel_step`` times its value, which keeps the
    left-point time change accurate near 0; passage below ``1 / n_max``
    counts as absorption at 0.  ``clock = (theta, T)`` stops the path once
    ``int Y^(-theta) ds`` reaches ``T``, enough to time-change it up to ``T``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if exact is None:
        exact = _exact_applicable(mech)
    if exact:
        return sample_compound_poisson(mech, x0, horizon, seed, path)
    lo, hi = _truncation(n_max)
    ctheta, cstop = (0.0, math.inf) if clock is None else (float(clock[0]), float(clock[1]))
    params = kernel_params(mech, 0.0, lo, hi, horizon, dt, rel_step=rel_step, delta_j=delta_j,
                           clock_theta=ctheta, clock_stop=cstop)
    summary, rec = record_euler(params, [x0], seed, path, backend=backend)
    grid, states = rec["t"], rec["x"][:, 0]
    jumps = [(float(t), float(z)) for t, z in zip(grid[1:], rec["jump"]) if z > 0.0]
    absorbed = None
    if summary["t_low"][0] < math.inf:
        absorbed = ("zero", float(summary["t_low"][0]))
        grid = grid.copy()
        grid[-1] = absorbed[1]
    elif summary["t_high"][0] < math.inf:
        absorbed = ("infinity", float(summary["t_high"][0]))
    end = horizon if absorbed is not None else float(summary["t_end"])
    return LevyPath(grid, states, jumps, absorbed, bool(summary["killed"][0]), end, mech, False, seed)


# ---------------------------------------------------------------------------
# time changes


def _seg_alpha(y: float, slope: float, ds: float, theta: float) -> float:
    """int_0^ds (y + slope u)^(-theta) du; ``inf`` when the piece ends at 0 and theta >= 1."""
    if ds <= 0.0:
        return 0.0
    if slope == 0.0:
        return ds * y ** (-theta)
    end = y + slope * ds
    if end <= 0.0:
        if theta >= 1.0:
            return math.inf
        return y ** (1.0 - theta) / (-slope * (1.0 - theta))
    if theta == 1.0:
        return math.log(end / y) / slope
    return (end ** (1.0 - theta) - y ** (1.0 - theta)) / (slope * (1.0 - theta))


def _ode_value(x: float, slope: float, tau: float, theta: float) -> float:
    """Solution of dX/dt = slope * X^theta after time ``tau`` from ``x``."""
    if slope == 0.0 or tau <= 0.0:
        return x
    if theta == 1.0:
        return x * math.exp(slope * tau)
    base = x ** (1.0 - theta) + slope * (1.0 - theta) * tau
    if base <= 0.0:
        return 0.0 if theta < 1.0 else math.inf
    return base ** (1.0 / (1.0 - theta))


def inverse_lamperti(path: LevyPath, theta: float) -> PathSample:
    """X_t = Y(eta(t)) with eta the right-continuous inverse of alpha(t) = int_0^t Y_(s-)^(-theta) ds.

    On step skeletons the left-point sum is exact; on exact linear pieces
    alpha is integrated in closed form.  The sample ends at the alpha-image
    of the Levy path's absorption time, or of its horizon when censored.
    """
    y = np.asarray(path.states, dtype=float)
    g = np.asarray(path.grid, dtype=float)
    if len(y) == 0:
        raise ValueError("empty path")
    if not theta >= 0:
        raise ValueError("theta must be >= 0")
    if y[0] <= 0.0:
        return PathSample(np.array([0.0]), np.array([0.0]), 0.0, math.inf, 0.0, "lamperti", path.seed,
                          (0.0, math.inf), 0.0)
    slope = path.slope
    alpha = np.empty(len(y))
    alpha[0] = 0.0
    for i in range(len(y) - 1):
        inc = _seg_alpha(y[i], slope, g[i + 1] - g[i], theta) if np.isfinite(y[i]) else 0.0
        alpha[i + 1] = alpha[i] + inc
    if path.absorbed_at is None:
        end_alpha = alpha[-1] + _seg_alpha(y[-1], slope, path.horizon - g[-1], theta)
    else:
        end_alpha = alpha[-1]

    t_low = t_high = math.inf
    if path.absorbed_at is not None:
        if path.absorbed_at[0] == "zero":
            t_low = end_alpha
        else:
            t_high = end_alpha
    limit = None
    if path.exact or theta == 0.0 or path.mech is None:
        # closed-form alpha decides reachability directly
        tau0, tauinf = t_low, t_high
        censored = path.absorbed_at is None
        if math.isinf(end_alpha) and path.absorbed_at is not None:
            limit = path.absorbed_at[0]
            alpha, y = alpha[:-1], y[:-1]
            end_alpha = math.inf
    else:
        tau0, tauinf, limit, censored = _label(path.mech.with_theta(theta), t_low, t_high, path.killed, end_alpha)
    return PathSample(alpha, y.copy(), tau0, tauinf, min(tau0, tauinf), "lamperti", path.seed,
                      (0.0, math.inf), float(end_alpha), limit=limit, censored=censored,
                      meta={"levy_grid": g.copy(), "slope": slope, "theta": theta})


def forward_lamperti(sample: PathSample, theta: float, mech: Mechanism | None = None) -> LevyPath:
    """Y_t = X(gamma^-1(t)) with gamma(t) = int_0^t X_s^theta ds.

    Exact on step skeletons and, through ``int X^theta dt = (X_end - X_start)
    / slope``, on the linear pieces of event-driven paths.
    """
    x = np.asarray(sample.states, dtype=float)
    a = np.asarray(sample.grid, dtype=float)
    slope = sample.meta.get("slope", 0.0)
    n = len(x)
    gamma = np.empty(n)
    gamma[0] = 0.0
    jumps = []
    for i in range(n - 1):
        if not np.isfinite(x[i]) or x[i] <= 0.0:
            gamma[i + 1] = gamma[i]
            continue
        if slope == 0.0:
            gamma[i + 1] = gamma[i] + (a[i + 1] - a[i]) * x[i] ** theta
            pre = x[i]
        else:
            pre = _ode_value(x[i], slope, a[i + 1] - a[i], theta)
            gamma[i + 1] = gamma[i] + (pre - x[i]) / slope
        if x[i + 1] > pre:
            jumps.append((float(gamma[i + 1]), float(x[i + 1] - pre)))
    absorbed = None
    if n > 1 and x[-1] == 0.0:
        absorbed = ("zero", float(gamma[-1]))
    elif np.isinf(x[-1]):
        absorbed = ("infinity", float(gamma[-1]))
    killed = bool(absorbed is not None and absorbed[0] == "infinity" and jumps and math.isinf(jumps[-1][1]))
    end = float(gamma[-1])
    rest = sample.horizon - a[-1]
    if absorbed is None and rest > 0.0 and 0.0 < x[-1] < math.inf and math.isfinite(rest):
        # censored sample: carry the clock on to its horizon
        if slope == 0.0:
            end += rest * x[-1] ** theta
        else:
            end += (_ode_value(x[-1], slope, rest, theta) - x[-1]) / slope
    return LevyPath(gamma, x.copy(), jumps, absorbed, killed, end, mech, slope != 0.0, sample.seed, slope)


# ---------------------------------------------------------------------------
# direct Euler for the SDE


def _truncation(n):
    n = float(n)
    if not (n >= 2 and math.isfinite(n)):
        raise ValueError(f"truncation level must be a finite number >= 2, got {n}")
    return 1.0 / n, n


def euler_sde(mech: Mechanism, x0: float, horizon: float, dt: float, n: float = DEFAULT_NMAX, seed: int = 0,
              path: int = 0, rel_step: float | None = None, delta_j: float = DEFAULT_DELTA_J,
              backend: str | None = None) -> PathSample:
    """One recorded path of the jump SDE on the substep grid."""
    lo, hi = _truncation(n)
    params = kernel_params(mech, mech.theta, lo, hi, horizon, dt, rel_step, delta_j)
    summary, rec = record_euler(params, [x0], seed, path, backend=backend)
    return _sample_from_record(mech, summary, rec, 0, "euler", seed, (lo, hi), horizon)


def _sample_from_record(mech, summary, rec, k, scheme, seed, trunc, horizon):
    t_low, t_high = float(summary["t_low"][k]), float(summary["t_high"][k])
    tau0, tauinf, limit, censored = _label(mech, t_low, t_high, bool(summary["killed"][k]), horizon)
    grid = rec["t"].copy()
    states = rec["x"][:, k].copy()
    return PathSample(grid, states, tau0, tauinf, min(tau0, tauinf), scheme, seed, trunc, horizon, limit,
                      censored, meta={"clips": int(summary["clips"]), "substeps": int(summary["substeps"]),
                                      "t_low": t_low, "t_high": t_high})


def coupled_pair(mech: Mechanism, x0: float, y0: float, horizon: float, dt: float, seed: int, path: int = 0,
                 n: float = DEFAULT_NMAX, rel_step: float | None = None, delta_j: float = DEFAULT_DELTA_J,
                 backend: str | None = None) -> tuple[PathSample, PathSample]:
    """Two Euler paths from ``x0 <= y0`` driven by the same Brownian increments and Poisson marks."""
    if not 0 <= x0 <= y0:
        raise ValueError("need 0 <= x0 <= y0")
    lo, hi = _truncation(n)
    params = kernel_params(mech, mech.theta, lo, hi, horizon, dt, rel_step, delta_j)
    summary, rec = record_euler(params, [x0, y0], seed, path, backend=backend)
    return (_sample_from_record(mech, summary, rec, 0, "euler", seed, (lo, hi), horizon),
            _sample_from_record(mech, summary, rec, 1, "euler", seed, (lo, hi), horizon))


def approx_from_infinity(mech: Mechanism, y: float, levels, horizon: float, dt: float, seed: int,
                         n_paths: int = 1, n: float = DEFAULT_NMAX, rel_step: float | None = None,
                         delta_j: float = DEFAULT_DELTA_J, threads: int | None = None,
                         backend: str | None = None) -> np.ndarray:
    """Coupled hitting times of ``y`` from every start in ``levels``; shape (n_paths, len(levels)).

    Unreached levels within the horizon are ``inf``.  The largest level's
    time approximates the time to come down from infinity.
    """
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) < 0):
        raise ValueError("levels must be nondecreasing")
    if mech.a != 0.0 or mech.beta < 0.0:
        import warnings

        warnings.warn("coming down from infinity is only meaningful for a = 0 and psi'(0) >= 0", stacklevel=2)
    lo, hi = _truncation(n)
    params = kernel_params(mech, mech.theta, lo, hi, horizon, dt, rel_step, delta_j, hit_y=y, stop_on_hit=True)
    out = run_euler(params, levels, n_paths, seed, threads=threads, backend=backend)
    return out["t_hit"]


def euler_marginal(mech: Mechanism, x0: float, t: float, n_paths: int, seed: int, dt: float = 1e-3,
                   n: float = DEFAULT_NMAX, rel_step: float | None = None, delta_j: float = DEFAULT_DELTA_J,
                   threads: int | None = None, backend: str | None = None) -> np.ndarray:
    """Sample of X_t from ``x0`` (0 after extinction, ``inf`` after explosion)."""
    if not t > 0:
        raise ValueError("t must be > 0")
    lo, hi = _truncation(n)
    params = kernel_params(mech, mech.theta, lo, hi, t, dt, rel_step, delta_j)
    out = run_euler(params, [x0], n_paths, seed, obs_t=[t], threads=threads, backend=backend)
    return out["obs"][:, 0, 0].copy()


def roundtrip_check(mech: Mechanism, x0: float, horizon: float, n_seeds: int, seed: int = 0) -> dict:
    """Run forward(inverse(Y)) on ``n_seeds`` event-driven paths and report the worst discrepancies.

    Values are compared exactly; jump times and sizes are recomputed through
    the time change and so only agree to rounding.
    """
    worst_t, worst_z, equal = 0.0, 0.0, True
    for p in range(n_seeds):
        levy = sample_compound_poisson(mech, x0, horizon, seed, path=p)
        back = forward_lamperti(inverse_lamperti(levy, mech.theta), mech.theta, mech)
        n = len(back.states)
        equal &= n <= len(levy.states) and bool(np.array_equal(levy.states[:n], back.states))
        j0 = [(t, z) for t, z in levy.jumps if t <= levy.grid[n - 1]]
        if len(j0) != len(back.jumps):
            equal = False
            continue
        for (t0, z0), (t1, z1) in zip(j0, back.jumps):
            worst_t = max(worst_t, abs(t0 - t1))
            if not (math.isinf(z0) and math.isinf(z1)):
                worst_z = max(worst_z, abs(z0 - z1))
    return {"paths": n_seeds, "max_time_error": worst_t, "max_size_error": worst_z, "values_equal": equal}


def paths_to_csv(samples, fh=None) -> str | None:
    """Columns: path, t, state (``inf`` for the cemetery state)."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "t", "state"])
    for i, s in enumerate(samples):
        for t, x in zip(s.grid, s.states):
            w.writerow([i, repr(float(t)), "inf" if math.isinf(x) else repr(float(x))])
    return buf.getvalue() if fh is None else None
