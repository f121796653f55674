"""Discrete-state polynomial branching chains and their rescaling.

A chain jumps from ``i >= 1`` at rate ``alpha * i**theta``; with probability
``b_k`` it moves to ``i + k - 1`` (``b_1 = 0``), and the missing mass
``b_inf = 1 - sum_k b_k`` sends it to infinity.  For the rescaled chain
``n^-1 xi_n(gamma_n t)`` with ``alpha = n**-theta`` the generator on
``exp(-l x)`` is ``x**theta exp(-l x) exp(l/n) phi_n(l)``, so the chain
approximates the continuous process when ``phi_n -> psi``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import run_gillespie
from ._kernels_py import gillespie_batch as _gillespie_py
from .mechanism import Mechanism, mechanism_to_dict

__all__ = [
    "OffspringLaw",
    "ChainSpec",
    "ChainPath",
    "q_matrix_row",
    "gillespie",
    "gillespie_batch",
    "generating_function",
    "phi_n",
    "psi_n",
    "build_approx_sequence",
    "rescaled_marginal",
    "EmpiricalCDF",
    "ks_two_sample",
    "ks_convergence",
    "ks_decreasing",
    "chain_spec_to_dict",
    "chain_spec_from_dict",
]

DEFAULT_MAX_CHILDREN = 10**6


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring probabilities on sorted ``ks`` (``1`` excluded) plus the mass sent to infinity."""

    ks: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        ks = tuple(int(k) for k in self.ks)
        probs = tuple(float(p) for p in self.probs)
        if len(ks) != len(probs):
            raise ValueError("ks and probs must have equal length")
        if any(k < 0 for k in ks):
            raise ValueError("offspring counts must be >= 0")
        if 1 in ks:
            raise ValueError("b_1 must be 0: offspring count 1 is not a jump")
        if list(ks) != sorted(set(ks)):
            raise ValueError("offspring counts must be strictly increasing")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("probabilities must be finite and >= 0")
        if math.fsum(probs) > 1.0 + 1e-12:
            raise ValueError(f"total offspring mass {math.fsum(probs)} exceeds 1")
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_dict(cls, b: dict) -> "OffspringLaw":
        items = sorted((int(k), float(p)) for k, p in b.items() if p != 0.0)
        return cls(tuple(k for k, _ in items), tuple(p for _, p in items))

    def prob(self, k: int) -> float:
        try:
            return self.probs[self.ks.index(k)]
        except ValueError:
            return 0.0

    @property
    def b_inf(self) -> float:
        return max(0.0, 1.0 - math.fsum(self.probs))

    @property
    def total(self) -> float:
        return math.fsum(self.probs)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.probs, dtype=float))


@dataclass(frozen=True)
class ChainSpec:
    offspring: OffspringLaw
    theta: float
    alpha_rate: float = 1.0
    n: int = 1
    gamma_n: float = 1.0
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be > 0")
        if not (self.alpha_rate > 0 and math.isfinite(self.alpha_rate)):
            raise ValueError("alpha_rate must be finite and > 0")
        if not (self.gamma_n > 0 and math.isfinite(self.gamma_n)):
            raise ValueError("gamma_n must be finite and > 0")

    def rate(self, i: int) -> float:
        return 0.0 if i <= 0 else self.alpha_rate * float(i) ** self.theta


def q_matrix_row(spec: ChainSpec, i: int) -> dict:
    """Off-diagonal rates out of state ``i``; the key ``math.inf`` carries the jump to infinity.

    The diagonal entry is ``-alpha i^theta`` (the sum of the row including
    the infinite state).
    """
    if i < 0:
        raise ValueError("state must be >= 0")
    if i == 0:
        return {}
    r = spec.rate(i)
    row = {}
    for k, p in zip(spec.offspring.ks, spec.offspring.probs):
        if p > 0:
            row[i + k - 1] = row.get(i + k - 1, 0.0) + r * p
    if spec.offspring.b_inf > 0:
        row[math.inf] = r * spec.offspring.b_inf
    return row


# ---------------------------------------------------------------------------
# generating functions


def generating_function(law: OffspringLaw, s):
    """g(s) = sum_k b_k s^k, evaluated by Horner's rule over the dense coefficient vector."""
    s = np.asarray(s, dtype=float)
    if not law.ks:
        return np.zeros_like(s)
    kmax = law.ks[-1]
    if kmax <= 4096:
        coef = np.zeros(kmax + 1)
        coef[list(law.ks)] = law.probs
        acc = np.zeros_like(s)
        for c in coef[::-1]:
            acc = acc * s + c
        return acc
    return _gf_direct(law, s)


_CHUNK = 1 << 14


def _gf_direct(law: OffspringLaw, s):
    """Independent code path: explicit powers summed chunk by chunk over the support."""
    s = np.asarray(s, dtype=float)
    flat = s.reshape(1, -1)
    ks = np.asarray(law.ks, dtype=float)
    p = np.asarray(law.probs, dtype=float)
    acc = np.zeros(flat.shape[1])
    for a in range(0, len(ks), _CHUNK):
        kk = ks[a:a + _CHUNK, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = p[a:a + _CHUNK, None] * np.power(flat, kk)
        acc += np.sum(np.where(np.isnan(terms), 0.0, terms), axis=0)
    return acc.reshape(s.shape)


def _gf_minus_s(law: OffspringLaw, s):
    """g(s) - s written as sum_k b_k (s^k - s) - b_inf s, avoiding cancellation near s = 1."""
    s = np.asarray(s, dtype=float)
    flat = s.reshape(1, -1)
    out = -law.b_inf * flat[0]
    ks = np.asarray(law.ks, dtype=float)
    p = np.asarray(law.probs, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.log(flat)
    for a in range(0, len(ks), _CHUNK):
        kk = ks[a:a + _CHUNK, None]
        # s^k - s = s * expm1((k-1) log s); for k = 0 this is 1 - s
        with np.errstate(invalid="ignore"):
            terms = np.where(kk == 0, 1.0 - flat, flat * np.expm1((kk - 1.0) * logs))
        out = out + np.sum(p[a:a + _CHUNK, None] * terms, axis=0)
    return out.reshape(s.shape)


def phi_n(law: OffspringLaw, gamma_n: float, n: float, lam, direct: bool = False):
    """gamma_n [g(exp(-l/n)) - exp(-l/n)]."""
    lam = np.asarray(lam, dtype=float)
    s = np.exp(-lam / n)
    if direct:
        return gamma_n * (_gf_direct(law, s) - s)
    return gamma_n * _gf_minus_s(law, s)


def psi_n(law: OffspringLaw, gamma_n: float, n: float, lam, direct: bool = False):
    """gamma_n [g(1 - l/n) - (1 - l/n)] for 0 <= l <= n."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(lam > n):
        raise ValueError("psi_n needs 0 <= lambda <= n")
    s = 1.0 - lam / n
    if direct:
        return gamma_n * (_gf_direct(law, s) - s)
    return gamma_n * _gf_minus_s(law, s)


# ---------------------------------------------------------------------------
# approximating sequence


def build_approx_sequence(mech: Mechanism, n: int, max_children: int = DEFAULT_MAX_CHILDREN) -> ChainSpec:
    """Chain whose rescaling ``n^-1 xi_n(gamma_n t)`` approximates the process of ``mech``.

    Each component of the mechanism becomes a block of jump rates on the
    lattice ``Z/n``; ``gamma_n`` is the total rate and ``b_k`` the rate
    shares, so ``b_1 = 0`` holds by construction:

    * diffusion: rate ``c n^2`` to each of ``k = 0`` and ``k = 2`` (exact: ``c l^2``);
    * drift: rate ``b n`` to ``k = 0`` if ``b > 0``, rate ``|b| n`` to ``k = 2`` if ``b < 0``;
    * atom ``(z, w)``: rate ``w`` to ``k = round(z n) + 1``, compensated by rate
      ``w round(z n)`` to ``k = 0`` when ``z <= 1``;
    * stable part: lattice masses ``m(((j-1/2)/n, (j+1/2)/n])`` for
      ``1 <= j <= max_children``, jumps below ``1/(2n)`` folded into the
      diffusion block, compensation as for atoms;
    * killing ``a`` and the stable mass beyond the truncation go to ``b_inf``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rates: dict[int, float] = {}
    kill_rate = mech.a

    def add(k, r):
        if r != 0.0:
            rates[k] = rates.get(k, 0.0) + r

    c_eff = mech.c
    m = mech.measure
    drift = mech.b
    comp = 0.0  # total compensating rate at k = 0
    for z, w in m.atoms:
        j = int(round(z * n))
        if j == 0:
            # atom below the lattice spacing: keep only its second moment
            c_eff += 0.5 * w * z * z
            continue
        add(j + 1, w)
        if z <= 1.0:
            # compensator: rate w*j at k=0 contributes w*(j/n)*l, matching the lattice jump
            add(0, w * j)
            comp += w * j
    if m.stable is not None:
        alpha, scale = m.stable

        def tail(u):  # m((u, inf))
            return scale * u ** (-alpha) / alpha

        half = 0.5 / n
        c_eff += 0.5 * scale * half ** (2.0 - alpha) / (2.0 - alpha)
        j = np.arange(1, max_children + 1, dtype=float)
        lo_edges = (j - 0.5) / n
        hi_edges = (j + 0.5) / n
        mass = tail(lo_edges) - tail(hi_edges)
        for jj, mm in zip(range(2, max_children + 2), mass.tolist()):
            add(jj, mm)
        small = j / n <= 1.0
        # compensate each cell at its lattice point so the small-jump sum stays O(l^2 z^2)
        add(0, float(np.sum(mass[small] * j[small])))
        comp += float(np.sum(mass[small] * j[small]))
        # the density is steep near 0, so the lattice misstates the second moment of the
        # first cells by O(n^(alpha-2)); put the difference into the diffusion block
        m2 = scale * (hi_edges[small] ** (2.0 - alpha) - lo_edges[small] ** (2.0 - alpha)) / (2.0 - alpha)
        c_eff += 0.5 * float(np.sum(m2 - mass[small] * (j[small] / n) ** 2))
        kill_rate += tail(hi_edges[-1])
    # the compensating -1/n moves carry variance comp/n^2 of their own; the symmetric
    # block only supplies what is missing (clipped at zero, leaving an O(1/n) excess)
    sym = max(c_eff * n * n - 0.5 * comp, 0.0)
    add(0, sym)
    add(2, sym)
    if drift > 0:
        add(0, drift * n)
    elif drift < 0:
        add(2, -drift * n)
    total = math.fsum(rates.values()) + kill_rate
    if total <= 0:
        raise ValueError("mechanism has no dynamics to approximate")
    ks = sorted(rates)
    law = OffspringLaw(tuple(ks), tuple(rates[k] / total for k in ks))
    return ChainSpec(law, mech.theta, alpha_rate=float(n) ** (-mech.theta), n=n, gamma_n=total,
                     meta={"kill_rate": kill_rate, "mechanism": mechanism_to_dict(mech)})


# ---------------------------------------------------------------------------
# simulation


@dataclass
class ChainPath:
    times: np.ndarray
    states: np.ndarray  # -1 encodes the state infinity
    t0: float
    tinf: float
    capped: bool
    seed: int

    def value_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.states[max(i, 0)])


def gillespie(spec: ChainSpec, i0: int, horizon: float, seed: int, path: int = 0, i_cap: int = 1 << 60,
              max_events: int = 10**8) -> ChainPath:
    """Exact event-driven path of the chain (chain time, no rescaling)."""
    if i0 < 0:
        raise ValueError("initial state must be >= 0")
    rec = {"t": [], "i": []}
    t0 = np.empty(1)
    tinf = np.empty(1)
    events = np.zeros(1, dtype=np.int64)
    capped = np.zeros(1, dtype=np.int8)
    i_fin = np.zeros(1, dtype=np.int64)
    obs = np.zeros((1, 0), dtype=np.int64)
    _gillespie_py(int(i0), spec.theta, spec.alpha_rate, spec.offspring.ks, spec.offspring.cumulative(), horizon,
                  [], seed, path, path + 1, i_cap, max_events, t0, tinf, events, capped, i_fin, obs, record=rec)
    return ChainPath(np.array(rec["t"]), np.array(rec["i"], dtype=np.int64), float(t0[0]), float(tinf[0]),
                     bool(capped[0]), seed)


def gillespie_batch(spec: ChainSpec, i0: int, horizon: float, n_paths: int, seed: int, obs_t=(),
                    time_scale: float = 1.0, i_cap: int = 1 << 60, max_events: int = 10**8,
                    threads: int | None = None, backend: str | None = None) -> dict:
    """Many paths at once; ``time_scale`` multiplies every rate (``gamma_n`` for rescaled time)."""
    return run_gillespie(int(i0), spec.theta, spec.alpha_rate * time_scale, spec.offspring.ks,
                         spec.offspring.cumulative(), horizon, n_paths, seed, obs_t=obs_t, i_cap=i_cap,
                         max_events=max_events, threads=threads, backend=backend)


@dataclass
class EmpiricalCDF:
    values: np.ndarray  # sorted samples, inf allowed

    def __call__(self, x):
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / len(self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "cumprob"])
        n = len(self.values)
        uniq, counts = np.unique(self.values, return_counts=True)
        cum = np.cumsum(counts) / n
        for v, c in zip(uniq, cum):
            w.writerow(["inf" if np.isinf(v) else repr(float(v)), repr(float(c))])
        return buf.getvalue()


def rescaled_marginal(spec: ChainSpec, x0: float, t: float, n_paths: int, seed: int,
                      threads: int | None = None, backend: str | None = None,
                      max_events: int = 10**8) -> EmpiricalCDF:
    """Empirical law of ``n^-1 xi_n(gamma_n t)`` started from ``round(n x0)``."""
    n = spec.n
    i0 = int(round(n * x0))
    if t == 0:
        return EmpiricalCDF(np.full(n_paths, i0 / n))
    horizon = float(t)
    out = gillespie_batch(spec, i0, horizon, n_paths, seed, obs_t=[t], time_scale=spec.gamma_n,
                          threads=threads, backend=backend, max_events=max_events)
    raw = out["obs"][:, 0].astype(float)
    vals = np.where(raw < 0, math.inf, raw / n)
    if np.any(out["capped"] == 1):
        import warnings

        warnings.warn(f"{int(np.sum(out['capped'] == 1))} paths hit the event cap", stacklevel=2)
    return EmpiricalCDF(np.sort(vals))


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic; ``inf`` values are allowed in both samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_convergence(mech: Mechanism, x0: float, t: float, ns, n_paths: int, seed: int, dt: float = 1e-3,
                   threads: int | None = None, backend: str | None = None) -> list[dict]:
    """KS distance between the rescaled chain at time ``t`` and an Euler sample of X_t, for each n.

    ``ks_noise`` is the 95% two-sample null level ``1.358 sqrt(2/N)``; two
    consecutive distances count as decreasing within CI when the later one
    does not exceed the earlier one by more than this amount.
    """
    from .simulate import euler_marginal

    ref = euler_marginal(mech, x0, t, n_paths, seed, dt=dt, threads=threads, backend=backend)
    noise = 1.358 * math.sqrt(2.0 / n_paths)
    rows = []
    for k, n in enumerate(ns):
        spec = build_approx_sequence(mech, int(n))
        cdf = rescaled_marginal(spec, x0, t, n_paths, seed + 1 + k, threads=threads, backend=backend)
        rows.append({"n": int(n), "ks": ks_two_sample(cdf.values, ref), "ks_noise": noise,
                     "gamma_n": spec.gamma_n})
    return rows


def ks_decreasing(rows, slack: float | None = None) -> bool:
    """Consecutive KS distances are nonincreasing up to ``slack`` (default: the null noise level)."""
    ok = True
    for a, b in zip(rows[:-1], rows[1:]):
        tol = a["ks_noise"] if slack is None else slack
        ok &= b["ks"] <= a["ks"] + tol
    return bool(ok)


# ---------------------------------------------------------------------------
# spec files


def chain_spec_to_dict(spec: ChainSpec) -> dict:
    return {
        "theta": spec.theta,
        "alpha_rate": spec.alpha_rate,
        "n": spec.n,
        "gamma_n": spec.gamma_n,
        "offspring": [[k, p] for k, p in zip(spec.offspring.ks, spec.offspring.probs)],
        "b_inf": spec.offspring.b_inf,
        "mechanism": spec.meta.get("mechanism"),
    }


def chain_spec_from_dict(d: dict) -> ChainSpec:
    law = OffspringLaw(tuple(int(k) for k, _ in d["offspring"]), tuple(float(p) for _, p in d["offspring"]))
    meta = {}
    if d.get("mechanism") is not None:
        meta["mechanism"] = d["mechanism"]
    return ChainSpec(law, float(d["theta"]), float(d.get("alpha_rate", 1.0)), int(d.get("n", 1)),
                     float(d.get("gamma_n", 1.0)), meta=meta)


def load_chain_spec(path) -> ChainSpec:
    with open(path) as fh:
        return chain_spec_from_dict(json.load(fh))
