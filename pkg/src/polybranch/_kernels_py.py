"""Pure-Python simulation kernels.

This module is the reference implementation and the import-time fallback
for the compiled ``_kernels`` extension.  Both must produce bit-identical
output: every floating-point expression below is mirrored term by term in
``_kernels.pyx``, and random numbers come from the same counter-based
SplitMix64 streams.
"""
from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
TWO_PI = 6.283185307179586
INV_2_53 = 1.0 / 9007199254740992.0
LMAX = 30  # deepest dyadic refinement of an outer step
OBS_EPS = 1e-9

BACKEND = "python"


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def path_key(seed: int, path: int) -> int:
    return mix64((mix64((seed + GOLDEN) & MASK) + (path + 1) * GOLDEN) & MASK)


class Stream:
    """Counter-based uniform stream for one path."""

    __slots__ = ("key", "ctr")

    def __init__(self, seed: int, path: int):
        self.key = path_key(seed, path)
        self.ctr = 0

    def uniform(self) -> float:
        self.ctr += 1
        return ((mix64((self.key + self.ctr * GOLDEN) & MASK) >> 11) + 0.5) * INV_2_53

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def uniforms(seed: int, path: int, n: int) -> np.ndarray:
    s = Stream(seed, path)
    return np.array([s.uniform() for _ in range(n)])


# ---------------------------------------------------------------------------
# Euler scheme for the jump SDE (theta = 0 gives the Levy process itself)


def _live(st, th, soh):
    return st == 0 and not (soh and th < math.inf)


def _step_ok(rel, d, v, status, t_hit, stop_on_hit, x, R, h):
    for k in range(len(x)):
        if _live(status[k], t_hit[k], stop_on_hit):
            lim = rel * x[k]
            if R[k] * h * abs(d) > lim or R[k] * h * v > lim * lim:
                return False
    return True


def _euler_one(p, x0, key_seed, path, obs_t, out, rec):
    K = len(x0)
    theta = p["theta"]
    d = p["drift"]
    v = p["var"]
    lo = p["lo"]
    hi = p["hi"]
    horizon = p["horizon"]
    dt = p["dt"]
    rel = p["rel_step"]
    az = p["atom_z"]
    aw = p["atom_w"]
    nat = len(az)
    st_alpha = p["st_alpha"]
    st_delta = p["st_delta"]
    st_mass = p["st_mass"]
    lam_tot = p["lam_tot"]
    hit_y = p["hit_y"]
    stop_on_hit = p["stop_on_hit"]
    max_sub = p["max_substeps"]
    clock_theta = p.get("clock_theta", 0.0)
    clock_stop = p.get("clock_stop", math.inf)
    clock = 0.0
    nobs = len(obs_t)

    rng = Stream(key_seed, path)
    x = [0.0] * K
    status = [0] * K  # 0 active, 1 absorbed low, 2 absorbed high
    t_low = [math.inf] * K
    t_high = [math.inf] * K
    killed = [0] * K
    t_hit = [math.inf] * K
    jump = [0.0] * K
    R = [0.0] * K
    obs = out["obs"]

    for k in range(K):
        x[k] = x0[k]
        if hit_y >= 0.0 and x[k] <= hit_y:
            t_hit[k] = 0.0
        if x[k] <= lo:
            status[k] = 1
            t_low[k] = 0.0
            x[k] = 0.0
        elif x[k] >= hi:
            status[k] = 2
            t_high[k] = 0.0
            x[k] = math.inf
    if rec is not None:
        rec["t"].append(0.0)
        rec["x"].append(list(x))

    j_obs = 0
    kstep = 0
    substeps = 0
    clips = 0
    capped = 0
    total = 1 << LMAX
    t = 0.0
    while True:
        done = True
        for k in range(K):
            if _live(status[k], t_hit[k], stop_on_hit):
                done = False
        if done:
            break
        T0 = kstep * dt
        if T0 >= horizon:
            break
        hout = horizon - T0
        if dt < hout:
            hout = dt
        L = 0
        pos = 0
        while pos < total:
            t = T0 + hout * (pos / total)
            Rmax = 0.0
            for k in range(K):
                if _live(status[k], t_hit[k], stop_on_hit):
                    if theta == 0.0:
                        R[k] = 1.0
                    else:
                        R[k] = x[k] ** theta
                    if R[k] > Rmax:
                        Rmax = R[k]
                else:
                    R[k] = 0.0
            if rel > 0.0:
                # coarsest dyadic step aligned with pos that meets the relative bound
                while (L > 0 and (pos & ((1 << (LMAX - L + 1)) - 1)) == 0
                       and _step_ok(rel, d, v, status, t_hit, stop_on_hit, x, R, math.ldexp(hout, -(L - 1)))):
                    L -= 1
                while L < LMAX and not _step_ok(rel, d, v, status, t_hit, stop_on_hit, x, R, math.ldexp(hout, -L)):
                    L += 1
            h = math.ldexp(hout, -L)
            while j_obs < nobs and obs_t[j_obs] < t + h - OBS_EPS * h:
                for k in range(K):
                    obs[k, j_obs] = x[k]
                j_obs += 1

            N = 0.0
            if v > 0.0:
                N = rng.normal()
            for k in range(K):
                jump[k] = 0.0
            if lam_tot > 0.0 and Rmax > 0.0:
                rate = lam_tot * Rmax
                s = -math.log(rng.uniform()) / rate
                while s < h:
                    umark = rng.uniform() * Rmax
                    utype = rng.uniform() * lam_tot
                    z = math.inf
                    acc = 0.0
                    chosen = False
                    for i in range(nat):
                        acc += aw[i]
                        if utype < acc:
                            z = az[i]
                            chosen = True
                            break
                    if not chosen:
                        acc += st_mass
                        if utype < acc:
                            z = st_delta * rng.uniform() ** (-1.0 / st_alpha)
                        else:
                            z = math.inf
                    for k in range(K):
                        if _live(status[k], t_hit[k], stop_on_hit) and umark <= R[k]:
                            jump[k] += z
                    s += -math.log(rng.uniform()) / rate

            if clock_stop < math.inf and status[0] == 0:
                clock += math.pow(x[0], -clock_theta) * h
            for k in range(K):
                if not _live(status[k], t_hit[k], stop_on_hit):
                    continue
                xold = x[k]
                xc = xold + d * R[k] * h + math.sqrt(v * R[k] * h) * N
                if hit_y >= 0.0 and t_hit[k] == math.inf and xc <= hit_y:
                    t_hit[k] = t + h * ((xold - hit_y) / (xold - xc))
                if xc <= lo:
                    status[k] = 1
                    t_low[k] = t + h * ((xold - lo) / (xold - xc))
                    x[k] = 0.0
                    continue
                xn = xc + jump[k]
                if xn >= hi:
                    status[k] = 2
                    t_high[k] = t + h
                    if jump[k] == math.inf:
                        killed[k] = 1
                    x[k] = math.inf
                else:
                    x[k] = xn
            # keep the levels ordered: once paths meet they move together
            for k in range(K - 2, -1, -1):
                if x[k] > x[k + 1]:
                    clips += 1
                    x[k] = x[k + 1]
                    if status[k + 1] == 1:
                        status[k] = 1
                        if t_low[k + 1] < t_low[k]:
                            t_low[k] = t_low[k + 1]
                    if t_hit[k + 1] < t_hit[k]:
                        t_hit[k] = t_hit[k + 1]
            pos += 1 << (LMAX - L)
            substeps += 1
            if rec is not None:
                rec["t"].append(T0 + hout * (pos / total))
                rec["x"].append(list(x))
                rec["jump"].append(jump[0])
            if substeps >= max_sub:
                capped = 1
                break
            done = True
            for k in range(K):
                if _live(status[k], t_hit[k], stop_on_hit):
                    done = False
            if clock >= clock_stop:
                done = True
            if done:
                break
        if capped or done:
            t = T0 + hout * (pos / total)
            break
        kstep += 1
        t = kstep * dt

    while j_obs < nobs:
        for k in range(K):
            obs[k, j_obs] = x[k]
        j_obs += 1
    for k in range(K):
        out["t_low"][k] = t_low[k]
        out["t_high"][k] = t_high[k]
        out["killed"][k] = killed[k]
        out["t_hit"][k] = t_hit[k]
        out["x_fin"][k] = x[k]
    out["t_end"][0] = t
    out["substeps"][0] = substeps
    out["clips"][0] = clips
    out["capped"][0] = capped


def euler_batch(params, x0, obs_t, seed, start, stop, t_low, t_high, killed, t_hit, x_fin, obs,
                t_end, substeps, clips, capped, record=None):
    """Simulate paths ``start..stop-1`` and write into row ``path - start`` of the outputs."""
    x0 = [float(v) for v in x0]
    obs_t = [float(v) for v in obs_t]
    p = dict(params)
    p["atom_z"] = [float(v) for v in params["atom_z"]]
    p["atom_w"] = [float(v) for v in params["atom_w"]]
    for path in range(start, stop):
        r = path - start
        out = {
            "t_low": t_low[r], "t_high": t_high[r], "killed": killed[r], "t_hit": t_hit[r],
            "x_fin": x_fin[r], "obs": obs[r], "t_end": t_end[r:r + 1], "substeps": substeps[r:r + 1],
            "clips": clips[r:r + 1], "capped": capped[r:r + 1],
        }
        _euler_one(p, x0, seed, path, obs_t, out, record)


# ---------------------------------------------------------------------------
# exact simulation of the discrete-state chain


def gillespie_batch(i0, theta, rate_scale, ks, cum, horizon, obs_t, seed, start, stop, i_cap, max_events,
                    t0, tinf, events, capped, i_fin, obs, record=None):
    """Holding rate ``rate_scale * i**theta``; jump ``i -> i + k - 1`` with ``P(k) = cum[j] - cum[j-1]``.

    Mass ``1 - cum[-1]`` sends the chain to infinity.  Reaching ``i_cap`` is
    also treated as explosion and flagged in ``capped``.
    """
    ks = [int(k) for k in ks]
    cum = [float(c) for c in cum]
    ncum = len(cum)
    fin = cum[-1] if ncum else 0.0
    obs_t = [float(v) for v in obs_t]
    nobs = len(obs_t)
    for path in range(start, stop):
        r = path - start
        rng = Stream(seed, path)
        i = int(i0)
        t = 0.0
        ev = 0
        cap = 0
        j = 0
        t0[r] = math.inf
        tinf[r] = math.inf
        if record is not None:
            record["t"].append(0.0)
            record["i"].append(i)
        while True:
            if i == 0:
                t0[r] = t
                break
            rate = rate_scale * float(i) ** theta
            tn = t + -math.log(rng.uniform()) / rate
            while j < nobs and obs_t[j] < tn:
                obs[r, j] = i
                j += 1
            if tn >= horizon:
                break
            t = tn
            u = rng.uniform()
            ev += 1
            if u >= fin:
                i = -1
                tinf[r] = t
            else:
                i = i + ks[bisect_right(cum, u)] - 1
                if i >= i_cap:
                    i = -1
                    tinf[r] = t
                    cap = 2
            if record is not None:
                record["t"].append(t)
                record["i"].append(i)
            if i < 0:
                break
            if ev >= max_events:
                cap = 1
                break
        while j < nobs:
            obs[r, j] = i
            j += 1
        events[r] = ev
        capped[r] = cap
        i_fin[r] = i
