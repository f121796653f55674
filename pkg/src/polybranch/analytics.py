"""Hitting probabilities, mean hitting times and boundary classification.

The mean-time functions return *restricted* expectations, e.g.
``E_x(tau_0; X_inf = 0)``, exactly as the integral formulas produce them.
Conditional versions divide by the event probability and are exposed as
``conditional_*`` helpers.  ``math.inf`` is a genuine return value: it is
only produced when the exponent analysis proves the integral diverges.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hkernel import HxKernel, TwoLevelKernel
from .mechanism import Mechanism
from .quadrature import IntegrandKind, QuadratureResult, integrate

__all__ = [
    "HxKernel",
    "TwoLevelKernel",
    "ClassificationReport",
    "hit_prob",
    "mean_extinction_time",
    "mean_explosion_time",
    "mean_absorption_time",
    "mean_two_sided",
    "mean_hit_time",
    "mean_hit_from_infinity",
    "conditional_extinction_time",
    "conditional_explosion_time",
    "classify",
    "kernel_table",
    "table_to_csv",
]

PROB_TOL = 1e-10
TIME_REL_TOL = 1e-8


def _check_x(x):
    x = float(x)
    if not (x >= 0 and math.isfinite(x)):
        raise ValueError(f"initial state must be finite and >= 0, got {x}")
    return x


def hit_prob(mech: Mechanism, x: float, y: float = 0.0) -> float:
    """P_x(tau_y < inf) = exp(-q (x - y)) for 0 <= y <= x.

    With ``y = 0`` this is P_x(X_inf = 0); whether 0 is actually reached in
    finite time is a separate question answered by :func:`classify`.
    """
    x, y = _check_x(x), float(y)
    if not 0.0 <= y <= x:
        raise ValueError(f"need 0 <= y <= x, got x={x}, y={y}")
    return math.exp(-mech.q * (x - y))


def _value(res: QuadratureResult, full: bool):
    return res if full else res.value


def mean_extinction_time(mech: Mechanism, x: float, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                         full: bool = False):
    """E_x(tau_0; X_inf = 0), the restricted mean extinction time."""
    x = _check_x(x)
    if x == 0.0:
        return _value(QuadratureResult(0.0, 0.0, True, 0), full)
    return _value(integrate(IntegrandKind.EXTINCTION, mech, {"x": x}, tol, rel_tol), full)


def mean_explosion_time(mech: Mechanism, x: float, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                        full: bool = False):
    """E_x(tau_inf; X_inf = inf); zero when q = 0."""
    x = _check_x(x)
    if x == 0.0:
        return _value(QuadratureResult(0.0, 0.0, True, 0), full)
    return _value(integrate(IntegrandKind.EXPLOSION, mech, {"x": x}, tol, rel_tol), full)


def mean_absorption_time(mech: Mechanism, x: float, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                         full: bool = False):
    """E_x(tau) with tau = tau_0 ^ tau_inf."""
    x = _check_x(x)
    if x == 0.0:
        return _value(QuadratureResult(0.0, 0.0, True, 0), full)
    return _value(integrate(IntegrandKind.ABSORPTION, mech, {"x": x}, tol, rel_tol), full)


def mean_two_sided(mech: Mechanism, x: float, y: float, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                   full: bool = False):
    """E_x(tau_inf ^ tau_y) for 0 < y <= x."""
    x, y = _check_x(x), float(y)
    if not 0.0 <= y <= x:
        raise ValueError(f"need 0 <= y <= x, got x={x}, y={y}")
    return _value(integrate(IntegrandKind.TWO_SIDED, mech, {"x": x, "y": y}, tol, rel_tol), full)


def _require_no_explosion_drift(mech: Mechanism, what: str):
    if mech.a != 0.0 or mech.beta < 0.0:
        raise ValueError(f"{what} needs a = 0 and psi'(0) >= 0 (got a={mech.a}, psi'(0)={mech.beta})")


def mean_hit_time(mech: Mechanism, x: float, y: float, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                  full: bool = False):
    """E_x(tau_y) when a = 0 and psi'(0) >= 0 (no explosion, level y is hit a.s.)."""
    _require_no_explosion_drift(mech, "mean_hit_time")
    x, y = _check_x(x), float(y)
    if not 0.0 <= y <= x:
        raise ValueError(f"need 0 <= y <= x, got x={x}, y={y}")
    return _value(integrate(IntegrandKind.HIT_TIME, mech, {"x": x, "y": y}, tol, rel_tol), full)


def mean_hit_from_infinity(mech: Mechanism, y: float = 0.0, tol: float = 1e-10, rel_tol: float = TIME_REL_TOL,
                           full: bool = False):
    """Limit of E_x(tau_y) as x -> inf, i.e. the mean time to come down to y."""
    _require_no_explosion_drift(mech, "mean_hit_from_infinity")
    y = float(y)
    if not y >= 0:
        raise ValueError(f"y must be >= 0, got {y}")
    return _value(integrate(IntegrandKind.FROM_INFINITY, mech, {"y": y}, tol, rel_tol), full)


def conditional_extinction_time(mech: Mechanism, x: float, **kw) -> float:
    """E_x(tau_0 | X_inf = 0)."""
    return mean_extinction_time(mech, x, **kw) / hit_prob(mech, x, 0.0)


def conditional_explosion_time(mech: Mechanism, x: float, **kw) -> float:
    """E_x(tau_inf | X_inf = inf); nan when that event is null."""
    p = 1.0 - hit_prob(mech, x, 0.0)
    if p == 0.0:
        return math.nan
    return mean_explosion_time(mech, x, **kw) / p


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassificationReport:
    x: float
    extinction: str  # "possible" | "impossible"
    explosion: str
    comes_down_from_infinity: str  # "yes" | "no" | "not applicable"
    prob_extinct_limit: float  # P_x(X_inf = 0)
    prob_explode_limit: float  # P_x(X_inf = inf)
    prob_extinction: float  # P_x(tau_0 < inf)
    prob_explosion: float  # P_x(tau_inf < inf)
    q: float
    beta: float
    psi_at_zero: float
    theta: float
    evidence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d, default=str, allow_nan=True))

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(asdict(self)), **kw)

    def pretty(self) -> str:
        lines = [
            f"x = {self.x:g}, theta = {self.theta:g}, q = {self.q:.12g}, psi(0) = {self.psi_at_zero:g}, "
            f"psi'(0) = {self.beta:g}",
            f"extinction:  {self.extinction:<10s} P(tau_0 < inf) = {self.prob_extinction:.10g}",
            f"explosion:   {self.explosion:<10s} P(tau_inf < inf) = {self.prob_explosion:.10g}",
            f"coming down from infinity: {self.comes_down_from_infinity}",
            f"limit law:   P(X_inf = 0) = {self.prob_extinct_limit:.10g}, "
            f"P(X_inf = inf) = {self.prob_explode_limit:.10g}",
        ]
        for name, ev in self.evidence.items():
            lines.append(f"  [{name}] {ev['integral']}: {_fmt_value(ev['value'])}"
                         + (f" ({ev['note']})" if ev.get("note") else ""))
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def _fmt_value(v):
    return "+inf (divergent)" if v == math.inf else f"{v:.10g}"


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    return obj


def _evidence(kind, mech, eps, label):
    res = integrate(kind, mech, {"eps": eps})
    return {
        "integral": label,
        "eps": eps,
        "value": res.value,
        "finite": not res.diverged,
        "converged": res.converged,
        "note": res.note,
    }


def classify(mech: Mechanism, x: float = 1.0) -> ClassificationReport:
    """Extinction / explosion / coming-down verdicts by the integral tests."""
    x = _check_x(x)
    if x == 0.0:
        raise ValueError("classification needs x > 0")
    q, beta, theta = mech.q, mech.beta, mech.theta
    evidence = {}
    notes = []

    # extinction: int^inf l^(theta-1)/psi < inf, tested on (max(q,1)+1, inf) where psi > 0
    eps_tail = max(q, 1.0) + 1.0
    ev = _evidence(IntegrandKind.TAIL_TEST, mech, eps_tail, f"int_{eps_tail:g}^inf l^(theta-1)/psi(l) dl")
    evidence["extinction_tail_test"] = ev
    extinction = "possible" if ev["finite"] else "impossible"

    # explosion
    if mech.a > 0:
        explosion = "possible"
        notes.append("psi(0) = -a < 0: killing makes explosion possible")
    elif beta >= 0:
        explosion = "impossible"
        notes.append("psi(0) = 0 and psi'(0) >= 0")
    else:
        eps0 = q / 2.0
        ev0 = _evidence(IntegrandKind.ORIGIN_TEST_NEG, mech, eps0,
                        f"int_0^{eps0:g} l^(theta-1)/(-psi(l)) dl")
        evidence["explosion_origin_test"] = ev0
        explosion = "possible" if ev0["finite"] else "impossible"

    # coming down from infinity, only under a = 0 and psi'(0) >= 0
    if mech.a == 0.0 and beta >= 0:
        eps1 = 1.0
        ev1 = _evidence(IntegrandKind.ORIGIN_TEST, mech, eps1, f"int_0^{eps1:g} l^(theta-1)/psi(l) dl")
        evidence["coming_down_origin_test"] = ev1
        comes_down = "yes" if ev1["finite"] else "no"
    else:
        comes_down = "not applicable"

    p0 = hit_prob(mech, x, 0.0)
    pinf = 1.0 - p0
    return ClassificationReport(
        x=x,
        extinction=extinction,
        explosion=explosion,
        comes_down_from_infinity=comes_down,
        prob_extinct_limit=p0,
        prob_explode_limit=pinf,
        prob_extinction=p0 if extinction == "possible" else 0.0,
        prob_explosion=pinf if explosion == "possible" else 0.0,
        q=q,
        beta=beta,
        psi_at_zero=mech.profile.psi_at_zero,
        theta=theta,
        evidence=evidence,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# lambda-grid tables


def kernel_table(mech: Mechanism, x: float, lambdas) -> list[dict]:
    """Rows (lambda, psi, h_x, integrand of the absorption formula) for plotting."""
    lam = np.asarray(lambdas, dtype=float)
    h = HxKernel(mech, x)(lam)
    integrand = h * lam ** (mech.theta - 1.0)
    psi_vals = mech.psi(lam)
    return [
        {"lambda": float(l), "psi": float(p), "h_x": float(v), "integrand": float(g)}
        for l, p, v, g in zip(lam, np.atleast_1d(psi_vals), h, integrand)
    ]


def table_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
