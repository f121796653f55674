"""Monte Carlo estimators of hitting probabilities and restricted mean times.

Every estimator runs the Euler kernel on ``n_paths`` independent paths
(one counter-based random stream per path), so results depend only on
``(mechanism, options, seed, n_paths)`` and never on the thread count.
Sums are taken with :func:`math.fsum`, which is exact and therefore
independent of the reduction order.

Paths still alive at the horizon are *censored*.  They are never dropped.
Each estimate carries

* ``lower``: censored paths contribute the horizon (or 0 for probabilities);
* ``extrapolated``: every path contributes the exact conditional
  expectation given the state where it stopped (a truncation level or its
  state at the horizon), which by the strong Markov property removes both
  the horizon and the truncation bias up to discretisation error;
* ``upper``: for probabilities, ``lower`` plus the censored fraction.

``point`` is the extrapolated value whenever it could be computed and the
lower-bound value otherwise.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytics
from ._backend import run_euler
from .mechanism import Mechanism
from .simulate import DEFAULT_DELTA_J, DEFAULT_NMAX, boundary_reachability, kernel_params

__all__ = [
    "Estimate",
    "PathBatch",
    "ResultRow",
    "simulate_batch",
    "estimate_extinction_prob",
    "estimate_restricted_mean",
    "estimate_hit_time",
    "compare",
    "rows_to_csv",
    "rows_to_json",
]

EVENTS = ("extinct", "exploded", "either")


@dataclass
class Estimate:
    point: float
    stderr: float
    n_paths: int
    censored_fraction: float
    horizon: float
    seed: int
    lower: float
    upper: float = math.inf
    extrapolated: float | None = None
    meta: dict = field(default_factory=dict)

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.point - z * self.stderr, self.point + z * self.stderr

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PathBatch:
    """Per-path outcome of one Euler run from a single start."""

    tau0: np.ndarray  # finite only when 0 is reached and reachable
    tauinf: np.ndarray
    to_zero: np.ndarray  # left through the lower truncation (reached or limit)
    to_inf: np.ndarray
    censored: np.ndarray
    t_hit: np.ndarray
    t_low: np.ndarray
    t_high: np.ndarray
    killed: np.ndarray
    x_fin: np.ndarray
    clips: int
    substeps: int
    capped: int


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    n = len(v)
    mean = math.fsum(v.tolist()) / n
    if n < 2:
        return mean, math.inf
    var = math.fsum(((v - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def simulate_batch(mech: Mechanism, x: float, horizon: float, n_paths: int, seed: int, dt: float = 1e-3,
                   n: float = DEFAULT_NMAX, rel_step: float | None = None, delta_j: float = DEFAULT_DELTA_J,
                   hit_y: float = -1.0, stop_on_hit: bool = False, threads: int | None = None,
                   backend: str | None = None) -> PathBatch:
    """Run ``n_paths`` Euler paths from ``x`` and label their exits by the integral tests."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    lo, hi = 1.0 / n, float(n)
    params = kernel_params(mech, mech.theta, lo, hi, horizon, dt, rel_step, delta_j, hit_y=hit_y,
                           stop_on_hit=stop_on_hit)
    out = run_euler(params, [x], n_paths, seed, threads=threads, backend=backend)
    t_low = out["t_low"][:, 0]
    t_high = out["t_high"][:, 0]
    killed = out["killed"][:, 0].astype(bool)
    can0, caninf = boundary_reachability(mech)
    to_zero = np.isfinite(t_low)
    to_inf = np.isfinite(t_high)
    tau0 = np.where(to_zero & can0, t_low, math.inf)
    tauinf = np.where(to_inf & (killed | caninf), t_high, math.inf)
    t_hit = out["t_hit"][:, 0]
    censored = ~(to_zero | to_inf)
    if stop_on_hit:
        censored &= ~np.isfinite(t_hit)
    return PathBatch(tau0, tauinf, to_zero, to_inf, censored, t_hit, t_low, t_high, killed, out["x_fin"][:, 0],
                     int(out["clips"].sum()), int(out["substeps"].sum()), int(out["capped"].sum()))


def _check_start(x):
    x = float(x)
    if not (x >= 0 and math.isfinite(x)):
        raise ValueError(f"initial state must be finite and >= 0, got {x}")
    return x


def _trivial(value, n_paths, horizon, seed) -> Estimate:
    return Estimate(value, 0.0, n_paths, 0.0, horizon, seed, value, value, value)


def _batch_meta(b: PathBatch) -> dict:
    return {"clips": b.clips, "substeps": b.substeps, "capped": b.capped}


class _Continuation:
    """Exact continuation values from a state ``z``, cached per distinct ``z``.

    For a path stopped at state ``z`` at time ``s`` the strong Markov
    property gives ``E[tau 1{E} | stop] = s P_z(E) + E_z(tau 1{E})``.
    """

    def __init__(self, mech: Mechanism):
        self.mech = mech
        self.can0, self.caninf = boundary_reachability(mech)
        self._cache: dict = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def prob_zero(self, z: float) -> float:
        """P_z(X_inf = 0)."""
        if math.isinf(z):
            return 0.0
        return analytics.hit_prob(self.mech, z)

    def event(self, z: float, event: str) -> tuple[float, float]:
        """(P_z(E), E_z(tau 1{E})) for E in extinct / exploded / either."""
        if math.isinf(z):
            return (0.0, 0.0) if event == "extinct" else (1.0, 0.0)
        p0 = self.prob_zero(z) if self.can0 else 0.0
        m0 = self._get(("m0", z), lambda: analytics.mean_extinction_time(self.mech, z)) if self.can0 else 0.0
        pinf = 1.0 - self.prob_zero(z) if self.caninf else 0.0
        minf = self._get(("minf", z), lambda: analytics.mean_explosion_time(self.mech, z)) if self.caninf else 0.0
        if event == "extinct":
            return p0, m0
        if event == "exploded":
            return pinf, minf
        return p0 + pinf, m0 + minf

    def two_sided(self, z: float, y: float) -> float:
        """E_z(tau_inf ^ tau_y)."""
        if math.isinf(z):
            return 0.0
        return self._get(("ts", z, y), lambda: analytics.mean_two_sided(self.mech, z, y))


def _stop_states(b: PathBatch, n: float, killed) -> np.ndarray:
    """State at which each path stopped: the truncation level it crossed, or X_H when censored."""
    z = b.x_fin.copy()
    z[b.to_zero] = 1.0 / n
    z[b.to_inf] = float(n)
    z[b.to_inf & killed] = math.inf
    return z


def _stop_times(b: PathBatch, horizon: float) -> np.ndarray:
    s = np.full(len(b.x_fin), float(horizon))
    s[b.to_zero] = b.t_low[b.to_zero]
    s[b.to_inf] = b.t_high[b.to_inf]
    return s


def estimate_extinction_prob(mech: Mechanism, x: float, horizon: float, n_paths: int, seed: int,
                             **sim) -> Estimate:
    """Fraction of paths that end at 0, estimating ``P_x(X_inf = 0)``.

    The lower-bound value counts censored paths as surviving, so it
    underestimates at a finite horizon.  The extrapolated value gives every
    stopped path its exact continuation probability ``exp(-q z)`` from the
    stopping state ``z`` (the lower truncation level, the upper one, or
    ``X_H`` when censored), which also removes the truncation bias.
    """
    x = _check_start(x)
    if x == 0.0:
        return _trivial(1.0, n_paths, horizon, seed)
    n = sim.get("n", DEFAULT_NMAX)
    b = simulate_batch(mech, x, horizon, n_paths, seed, **sim)
    lower, _ = _mean_se(b.to_zero.astype(float))
    cont = _Continuation(mech)
    z = _stop_states(b, n, b.killed)
    vals = np.array([cont.prob_zero(float(v)) for v in z])
    point, se = _mean_se(vals)
    cens = float(np.mean(b.censored))
    return Estimate(point, se, n_paths, cens, horizon, seed, lower, lower + cens, point, _batch_meta(b))


def estimate_restricted_mean(mech: Mechanism, x: float, event: str, horizon: float, n_paths: int, seed: int,
                             **sim) -> Estimate:
    """Mean of ``tau * 1{event}`` over all paths (zeros for paths without the event).

    ``event`` is ``"extinct"`` (``tau_0``), ``"exploded"`` (``tau_inf``) or
    ``"either"`` (``tau_0 ^ tau_inf``); the targets are the un-normalised
    expectations returned by :mod:`polybranch.analytics`.
    """
    if event not in EVENTS:
        raise ValueError(f"event must be one of {EVENTS}, got {event!r}")
    x = _check_start(x)
    if x == 0.0:
        return _trivial(0.0, n_paths, horizon, seed)
    n = sim.get("n", DEFAULT_NMAX)
    b = simulate_batch(mech, x, horizon, n_paths, seed, **sim)
    if event == "extinct":
        tau = b.tau0
    elif event == "exploded":
        tau = b.tauinf
    else:
        tau = np.minimum(b.tau0, b.tauinf)
    lower_vals = np.where(b.censored, horizon, np.where(np.isfinite(tau), tau, 0.0))
    cont = _Continuation(mech)
    z = _stop_states(b, n, b.killed)
    s = _stop_times(b, horizon)
    ext = np.empty(n_paths)
    for i in range(n_paths):
        p, m = cont.event(float(z[i]), event)
        ext[i] = s[i] * p + m if p > 0 else m
    lower, _ = _mean_se(lower_vals)
    point, se = _mean_se(ext)
    return Estimate(point, se, n_paths, float(np.mean(b.censored)), horizon, seed, lower, math.inf, point,
                    _batch_meta(b))


def estimate_hit_time(mech: Mechanism, x: float, y: float, horizon: float, n_paths: int, seed: int,
                      **sim) -> Estimate:
    """Mean of ``tau_inf ^ tau_y`` from ``x``, the target of ``mean_two_sided``.

    Paths that cross the upper truncation level continue from it through the
    exact formula when infinity is reachable; otherwise they never stop and
    the estimate is reported without extrapolation.
    """
    x = _check_start(x)
    y = float(y)
    if not 0.0 < y <= x:
        raise ValueError(f"need 0 < y <= x, got x={x}, y={y}")
    if y == x:
        return _trivial(0.0, n_paths, horizon, seed)
    n = sim.get("n", DEFAULT_NMAX)
    b = simulate_batch(mech, x, horizon, n_paths, seed, hit_y=y, stop_on_hit=True, **sim)
    tau = np.minimum(b.t_hit, b.tauinf)
    unresolved = ~np.isfinite(tau)
    lower_vals = np.where(unresolved, horizon, tau)
    cont = _Continuation(mech)
    ext = np.where(np.isfinite(b.t_hit), b.t_hit, math.inf)
    hi_exit = ~np.isfinite(b.t_hit) & b.to_inf
    for i in np.flatnonzero(hi_exit):
        if b.killed[i]:
            ext[i] = b.t_high[i]
        elif cont.caninf:
            ext[i] = b.t_high[i] + cont.two_sided(float(n), y)
    for i in np.flatnonzero(b.censored):
        ext[i] = horizon + cont.two_sided(float(b.x_fin[i]), y)
    lower, _ = _mean_se(lower_vals)
    if np.all(np.isfinite(ext)):
        point, se = _mean_se(ext)
        extrap = point
    else:
        point, se = _mean_se(lower_vals)
        extrap = None
    return Estimate(point, se, n_paths, float(np.mean(unresolved)), horizon, seed, lower, math.inf, extrap,
                    _batch_meta(b))


# ---------------------------------------------------------------------------
# comparison against analytic values


@dataclass
class ResultRow:
    quantity: str
    analytic: float
    mc_point: float
    stderr: float
    n: int
    horizon: float
    verdict: str


def compare(quantity: str, est: Estimate, analytic: float, k: float = 3.0, allowance: float = 0.0) -> ResultRow:
    """Verdict ``pass`` when ``|point - analytic| <= k stderr + allowance``.

    Without an extrapolated value the censored paths widen the band by the
    distance between the lower and upper bounds, so censoring can only turn
    a verdict into ``inconclusive``, never into a spurious pass.
    """
    diff = abs(est.point - analytic)
    band = k * est.stderr + allowance
    if diff <= band:
        verdict = "pass"
    elif est.extrapolated is None and est.censored_fraction > 0 and est.lower - band <= analytic:
        verdict = "inconclusive"
    else:
        verdict = "fail"
    return ResultRow(quantity, float(analytic), float(est.point), float(est.stderr), est.n_paths,
                     float(est.horizon), verdict)


def rows_to_csv(rows, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "analytic", "mc_point", "stderr", "n", "horizon", "verdict"])
    for r in rows:
        w.writerow([r.quantity, repr(r.analytic), repr(r.mc_point), repr(r.stderr), r.n, repr(r.horizon),
                    r.verdict])
    return buf.getvalue()


def rows_to_json(rows, header: dict | None = None) -> str:
    def enc(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        return v

    body = [{k: enc(v) for k, v in asdict(r).items()} for r in rows]
    return json.dumps({"header": header or {}, "rows": body}, indent=2, sort_keys=True)
