"""Branching mechanisms and their calculus.

A mechanism is the quadruple ``(a, b, c, m)`` together with the rate power
``theta``.  Its reproduction function is

    psi(l) = -a + b*l + c*l**2 + int_(0,inf) (exp(-l*z) - 1 + l*z*1{z<=1}) m(dz)

The Levy measure ``m`` is restricted to finitely many atoms, at most one
one-sided stable density ``C * z**(-1-alpha)`` and a killing mass ``a`` at
infinity.  Every compensator integral of that family has a closed form, so
``psi`` and its derivatives never need quadrature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

__all__ = [
    "LevyMeasureSpec",
    "Mechanism",
    "MechanismProfile",
    "StandingAssumptionError",
    "psi",
    "psi_prime",
    "psi_second",
    "root_q",
    "generator_on_exponential",
    "stable_part",
    "stable_scale_for_unit_power",
    "mechanism_to_dict",
    "mechanism_from_dict",
    "load_mechanism",
    "save_mechanism",
]

EULER_GAMMA = 0.57721566490153286061


class StandingAssumptionError(ValueError):
    """psi(l) <= 0 for every l > 0, i.e. -psi is a subordinator exponent."""


@dataclass(frozen=True)
class LevyMeasureSpec:
    atoms: tuple[tuple[float, float], ...] = ()
    stable: tuple[float, float] | None = None  # (alpha, scale)
    killing: float = 0.0

    def __post_init__(self):
        atoms = tuple((float(z), float(w)) for z, w in self.atoms)
        for z, w in atoms:
            if not (z > 0 and math.isfinite(z)):
                raise ValueError(f"atom size must be finite and > 0, got {z}")
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"atom mass must be finite and > 0, got {w}")
        object.__setattr__(self, "atoms", atoms)
        if self.stable is not None:
            alpha, scale = (float(v) for v in self.stable)
            if not 0.0 < alpha < 2.0:
                raise ValueError(f"stable index must lie in (0, 2), got {alpha}")
            if not scale > 0.0:
                raise ValueError(f"stable scale must be > 0, got {scale}")
            object.__setattr__(self, "stable", (alpha, scale))
        if not (self.killing >= 0 and math.isfinite(self.killing)):
            raise ValueError(f"killing mass must be finite and >= 0, got {self.killing}")
        object.__setattr__(self, "killing", float(self.killing))

    @property
    def is_finite(self) -> bool:
        """True when m has finite total mass on (0, inf)."""
        return self.stable is None

    def mean_above_one(self) -> float:
        """int_(1,inf) z m(dz); +inf when the stable tail has no mean."""
        total = sum(w * z for z, w in self.atoms if z > 1.0)
        if self.stable is not None:
            alpha, scale = self.stable
            if alpha <= 1.0:
                return math.inf
            total += scale / (alpha - 1.0)
        return total


@dataclass(frozen=True)
class MechanismProfile:
    beta: float
    q: float
    psi_at_zero: float
    origin_exponent: float
    tail_exponent: float
    origin_log: bool = False
    tail_log: bool = False
    assumption_check: str = ""


@dataclass(frozen=True)
class Mechanism:
    """Reproduction mechanism ``(a, b, c, m)`` with rate power ``theta``.

    ``a`` must equal ``measure.killing``.  The constructor checks the
    standing assumption (``psi(l) > 0`` for some ``l``) unless
    ``check_assumption=False``, which is only meant for building blocks
    such as a pure killing mechanism.
    """

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    measure: LevyMeasureSpec = field(default_factory=LevyMeasureSpec)
    theta: float = 1.0
    check_assumption: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        for name in ("a", "b", "c", "theta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.a < 0:
            raise ValueError(f"killing rate a must be >= 0, got {self.a}")
        if self.c < 0:
            raise ValueError(f"diffusion coefficient c must be >= 0, got {self.c}")
        if self.theta <= 0:
            raise ValueError(f"rate power theta must be > 0, got {self.theta}")
        if self.measure.killing != self.a:
            raise ValueError(
                f"killing rate a={self.a} disagrees with measure.killing={self.measure.killing}"
            )
        if self.check_assumption:
            self.profile  # noqa: B018  raises StandingAssumptionError

    @classmethod
    def make(
        cls,
        a: float = 0.0,
        b: float = 0.0,
        c: float = 0.0,
        theta: float = 1.0,
        atoms: Sequence[tuple[float, float]] = (),
        stable: tuple[float, float] | None = None,
        check_assumption: bool = True,
    ) -> "Mechanism":
        measure = LevyMeasureSpec(atoms=tuple(atoms), stable=stable, killing=a)
        return cls(a=a, b=b, c=c, measure=measure, theta=theta, check_assumption=check_assumption)

    def with_theta(self, theta: float) -> "Mechanism":
        return Mechanism(self.a, self.b, self.c, self.measure, theta, self.check_assumption)

    # -- derived constants -------------------------------------------------

    @cached_property
    def beta(self) -> float:
        """psi'(0) = b - int_(1,inf) z m(dz), possibly -inf."""
        return self.b - self.measure.mean_above_one()

    @cached_property
    def linear_coefficient_at_infinity(self) -> float:
        """Coefficient of l in psi as l -> inf when c = 0 and alpha < 1."""
        coef = self.b + sum(w * z for z, w in self.measure.atoms if z <= 1.0)
        if self.measure.stable is not None:
            alpha, scale = self.measure.stable
            if alpha < 1.0:
                coef += scale / (1.0 - alpha)
            else:
                return math.inf
        return coef

    @cached_property
    def profile(self) -> MechanismProfile:
        return _profile(self)

    @property
    def q(self) -> float:
        return self.profile.q

    # -- evaluation ---------------------------------------------------------

    def psi(self, lam):
        return psi(self, lam)

    def psi_prime(self, lam):
        return psi_prime(self, lam)

    def psi_second(self, lam):
        return psi_second(self, lam)


# ---------------------------------------------------------------------------
# closed forms


_PHI_COEFFS = [(-1.0) ** k / math.factorial(k) for k in range(2, 12)]


def _phi(u):
    """exp(-u) - 1 + u for u >= 0 without cancellation."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 0.1
    us = u[small]
    # Taylor series through u**11, relative truncation error < 1e-16 on [0, 0.1)
    acc = np.zeros_like(us)
    for ck in reversed(_PHI_COEFFS):
        acc = acc * us + ck
    out[small] = acc * us * us
    ub = u[~small]
    out[~small] = np.expm1(-ub) + ub
    return out


def stable_part(lam, alpha: float, scale: float, order: int = 0):
    """Contribution of C z^(-1-alpha) dz to psi (order 0) or its derivatives.

    alpha in (1,2): C*[Gamma(-alpha) l^alpha - l/(alpha-1)]
    alpha = 1:      C*[l log l + (gamma_E - 1) l]
    alpha in (0,1): C*[Gamma(-alpha) l^alpha + l/(1-alpha)]
    """
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha == 1.0:
            if order == 0:
                out = np.where(lam > 0, lam * np.log(np.where(lam > 0, lam, 1.0)), 0.0)
                out = out + (EULER_GAMMA - 1.0) * lam
            elif order == 1:
                out = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)) + EULER_GAMMA, -np.inf)
            else:
                out = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)
            return scale * out
        g = gamma_fn(-alpha)
        lin = -1.0 / (alpha - 1.0)
        if order == 0:
            out = g * lam**alpha + lin * lam
        elif order == 1:
            out = g * alpha * lam ** (alpha - 1.0) + lin
        else:
            out = g * alpha * (alpha - 1.0) * lam ** (alpha - 2.0)
        return scale * out


def stable_scale_for_unit_power(alpha: float) -> tuple[float, float]:
    """(scale, b) making psi(l) = l**alpha for a pure stable mechanism, alpha in (1,2)."""
    if not 1.0 < alpha < 2.0:
        raise ValueError("unit-power normalisation needs alpha in (1, 2)")
    scale = 1.0 / float(gamma_fn(-alpha))
    return scale, scale / (alpha - 1.0)


def _as_lambda(lam, allow_zero=True):
    arr = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("lambda must be finite")
    if np.any(arr < 0) or (not allow_zero and np.any(arr == 0)):
        raise ValueError("lambda must be >= 0" if allow_zero else "lambda must be > 0")
    return arr


def _scalar_or_array(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def psi(mech: Mechanism, lam):
    """psi(lam) for scalar or array ``lam >= 0``."""
    lam_in = lam
    lam = _as_lambda(lam)
    m = mech.measure
    beta = mech.beta
    out = -mech.a + mech.c * lam * lam
    if math.isfinite(beta):
        # beta-form: every atom enters through exp(-lz) - 1 + lz >= 0
        out = out + beta * lam
        for z, w in m.atoms:
            out = out + w * _phi(lam * z)
        if m.stable is not None:
            alpha, scale = m.stable
            out = out + scale * gamma_fn(-alpha) * lam**alpha
    else:
        out = out + mech.b * lam
        for z, w in m.atoms:
            if z <= 1.0:
                out = out + w * _phi(lam * z)
            else:
                out = out + w * np.expm1(-lam * z)
        alpha, scale = m.stable
        out = out + stable_part(lam, alpha, scale)
    return _scalar_or_array(out, lam_in)


def psi_prime(mech: Mechanism, lam):
    """psi'(lam); at 0 this is beta, which may be -inf."""
    lam_in = lam
    lam = _as_lambda(lam)
    m = mech.measure
    beta = mech.beta
    if math.isfinite(beta):
        out = beta + 2.0 * mech.c * lam
        for z, w in m.atoms:
            out = out - w * z * np.expm1(-lam * z)
        if m.stable is not None:
            alpha, scale = m.stable
            out = out + scale * gamma_fn(-alpha) * alpha * lam ** (alpha - 1.0)
    else:
        out = mech.b + 2.0 * mech.c * lam
        for z, w in m.atoms:
            out = out + w * z * ((1.0 if z <= 1.0 else 0.0) - np.exp(-lam * z))
        alpha, scale = m.stable
        out = out + stable_part(lam, alpha, scale, order=1)
    return _scalar_or_array(out, lam_in)


def psi_second(mech: Mechanism, lam):
    lam_in = lam
    lam = _as_lambda(lam)
    out = 2.0 * mech.c + 0.0 * lam
    for z, w in mech.measure.atoms:
        out = out + w * z * z * np.exp(-lam * z)
    if mech.measure.stable is not None:
        alpha, scale = mech.measure.stable
        out = out + stable_part(lam, alpha, scale, order=2)
    return _scalar_or_array(out, lam_in)


def generator_on_exponential(mech: Mechanism, lam: float, x: float) -> float:
    """L e_lam(x) = x^theta psi(lam) e^(-lam x) for e_lam(x) = exp(-lam x)."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0.0 or math.isinf(x):
        return 0.0
    return x**mech.theta * psi(mech, lam) * math.exp(-lam * x)


# ---------------------------------------------------------------------------
# root and asymptotics

_SCAN_EXPONENTS = range(-40, 1021)


def _bisect_root(mech: Mechanism, lo: float, hi: float) -> float:
    """Largest float with psi <= 0 in [lo, hi], given psi(lo) <= 0 < psi(hi)."""
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return lo
        if psi(mech, mid) > 0.0:
            hi = mid
        else:
            lo = mid


def root_q(mech: Mechanism) -> float:
    """q = inf{l > 0: psi(l) > 0}.

    Bracket by scanning l = 2^k, then bisect down to adjacent floats.
    Convexity makes the sign change above q unique.
    """
    if mech.a == 0.0 and mech.beta >= 0.0:
        return 0.0
    lo = 0.0
    for k in _SCAN_EXPONENTS:
        lam = math.ldexp(1.0, k)
        val = psi(mech, lam)
        if val > 0.0:
            return _bisect_root(mech, lo, lam)
        lo = lam
    raise StandingAssumptionError(
        "psi(l) <= 0 on the whole scan grid up to overflow scale: standing assumption violated"
    )


def _tail_analysis(mech: Mechanism) -> tuple[float, bool, bool]:
    """(tail exponent, log factor present, psi -> +inf)."""
    m = mech.measure
    if mech.c > 0:
        return 2.0, False, True
    if m.stable is not None and m.stable[0] > 1.0:
        return m.stable[0], False, True
    if m.stable is not None and m.stable[0] == 1.0:
        return 1.0, True, True
    return 1.0, False, mech.linear_coefficient_at_infinity > 0


def _origin_analysis(mech: Mechanism) -> tuple[float, bool]:
    m = mech.measure
    if mech.a > 0:
        return 0.0, False
    beta = mech.beta
    if beta == -math.inf:
        alpha = m.stable[0]
        return alpha, alpha == 1.0
    if beta != 0.0:
        return 1.0, False
    candidates = []
    if mech.c > 0 or m.atoms:
        candidates.append(2.0)
    if m.stable is not None and m.stable[0] > 1.0:
        candidates.append(m.stable[0])
    if not candidates:
        return math.inf, False
    return min(candidates), False


def _profile(mech: Mechanism) -> MechanismProfile:
    tail_exp, tail_log, grows = _tail_analysis(mech)
    if not grows:
        raise StandingAssumptionError(
            "psi is bounded above by 0 at infinity (tail analysis): standing assumption violated"
        )
    q = root_q(mech)  # also raises if the grid scan never sees psi > 0
    origin_exp, origin_log = _origin_analysis(mech)
    return MechanismProfile(
        beta=mech.beta,
        q=q,
        psi_at_zero=0.0 - mech.a,
        origin_exponent=origin_exp,
        tail_exponent=tail_exp,
        origin_log=origin_log,
        tail_log=tail_log,
        assumption_check="tail analysis + geometric grid scan (heuristic for general m)",
    )


# ---------------------------------------------------------------------------
# spec files


def mechanism_to_dict(mech: Mechanism) -> dict:
    m = mech.measure
    return {
        "a": mech.a,
        "b": mech.b,
        "c": mech.c,
        "theta": mech.theta,
        "atoms": [[z, w] for z, w in m.atoms],
        "stable": None if m.stable is None else {"alpha": m.stable[0], "scale": m.stable[1]},
        "killing": m.killing,
    }


def mechanism_from_dict(d: dict, check_assumption: bool = True) -> Mechanism:
    stable = d.get("stable")
    if stable is not None:
        stable = (float(stable["alpha"]), float(stable["scale"]))
    a = float(d.get("a", d.get("killing", 0.0)))
    killing = float(d.get("killing", a))
    measure = LevyMeasureSpec(
        atoms=tuple((float(z), float(w)) for z, w in d.get("atoms", [])),
        stable=stable,
        killing=killing,
    )
    return Mechanism(
        a=a,
        b=float(d.get("b", 0.0)),
        c=float(d.get("c", 0.0)),
        measure=measure,
        theta=float(d.get("theta", 1.0)),
        check_assumption=check_assumption,
    )


def load_mechanism(path) -> Mechanism:
    with open(path) as fh:
        return mechanism_from_dict(json.load(fh))


def save_mechanism(mech: Mechanism, path) -> None:
    with open(path, "w") as fh:
        json.dump(mechanism_to_dict(mech), fh, indent=2)
        fh.write("\n")
