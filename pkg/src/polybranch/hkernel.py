"""The h_x kernel and its two-level variant, with the removable point at q."""
from __future__ import annotations

import math

import numpy as np

from .mechanism import Mechanism, psi, psi_prime, psi_second

__all__ = ["HxKernel", "TwoLevelKernel"]

WINDOW = 1e-8


class HxKernel:
    """h_x(l) = (exp(-q x) - exp(-l x)) / psi(l), with h_x(q) = x exp(-q x) / psi'(q).

    Inside ``|l - q| < WINDOW * (1 + q)`` the ratio is replaced by its
    first-order expansion about ``q``.
    """

    def __init__(self, mech: Mechanism, x: float):
        if not x > 0:
            raise ValueError("x must be > 0")
        self.mech = mech
        self.x = float(x)
        self.q = mech.q
        self.delta = WINDOW * (1.0 + self.q)
        if self.q > 0:
            d1 = float(psi_prime(mech, self.q))
            d2 = float(psi_second(mech, self.q))
            self.at_q = self.x * math.exp(-self.q * self.x) / d1
            self._slope = -(self.x / 2.0 + d2 / (2.0 * d1))
        else:
            beta = mech.beta
            self.at_q = self.x / beta if beta > 0 else math.inf
            self._slope = 0.0

    def __call__(self, lam):
        lam_in = lam
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        q, x = self.q, self.x
        eps = lam - q
        out = np.empty_like(lam)
        near = np.abs(eps) < self.delta if q > 0 else lam == 0.0
        far = ~near
        if np.any(far):
            lf = lam[far]
            d = lf - q
            # factor out the smaller exponential so large x neither under- nor overflows
            num = np.where(d >= 0, -np.exp(-q * x) * np.expm1(-np.maximum(d, 0.0) * x),
                           np.exp(-lf * x) * np.expm1(np.minimum(d, 0.0) * x))
            out[far] = num / psi(self.mech, lf)
        if np.any(near):
            out[near] = self.at_q * (1.0 + self._slope * eps[near])
        return float(out[0]) if np.ndim(lam_in) == 0 else out


class TwoLevelKernel:
    """(exp(-(l-q) y) - exp(-(l-q) x)) / psi(l), equal to (x-y)/psi'(q) at l = q.

    With ``scaled=True`` the kernel is multiplied by exp(-q x), which keeps it
    finite for large ``q x``.
    """

    def __init__(self, mech: Mechanism, x: float, y: float, scaled: bool = False):
        if not 0 <= y <= x:
            raise ValueError("need 0 <= y <= x")
        self.mech = mech
        self.x, self.y = float(x), float(y)
        self.q = mech.q
        self.delta = WINDOW * (1.0 + self.q)
        if self.q > 0:
            d1 = float(psi_prime(mech, self.q))
            d2 = float(psi_second(mech, self.q))
            self.at_q = (self.x - self.y) / d1
            self._slope = -((self.x + self.y) / 2.0 + d2 / (2.0 * d1))
        else:
            self.at_q = (self.x - self.y) / mech.beta if mech.beta > 0 else math.inf
            self._slope = 0.0
        self.scaled = scaled
        if scaled:
            self.at_q *= math.exp(-self.q * self.x)

    def __call__(self, lam):
        lam_in = lam
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        eps = lam - self.q
        out = np.empty_like(lam)
        near = np.abs(eps) < self.delta if self.q > 0 else lam == 0.0
        far = ~near
        if np.any(far):
            ef = eps[far]
            if self.scaled:
                gap = self.x - self.y
                q, lf = self.q, lam[far]
                num = np.where(ef >= 0,
                               np.exp(-q * gap - lf * self.y) * -np.expm1(-np.maximum(ef, 0.0) * gap),
                               np.exp(-lf * self.x) * np.expm1(np.minimum(ef, 0.0) * gap))
            else:
                num = np.expm1(-ef * self.y) - np.expm1(-ef * self.x)
            out[far] = num / psi(self.mech, lam[far])
        if np.any(near):
            out[near] = self.at_q * (1.0 + self._slope * eps[near])
        return float(out[0]) if np.ndim(lam_in) == 0 else out
