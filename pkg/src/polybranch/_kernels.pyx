# cython: language_level=3
"""Compiled simulation kernels.

Term-by-term mirror of ``_kernels_py``; outputs are bit-identical.  The
batch loops run without the GIL so callers may split path ranges across
threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, pow, fabs, ldexp, INFINITY
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef int LMAX = 30
cdef double OBS_EPS = 1e-9


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t path_key(uint64_t seed, uint64_t path) noexcept nogil:
    return mix64(mix64(seed + GOLDEN) + (path + 1) * GOLDEN)


cdef inline bint live(int st, double th, int soh) noexcept nogil:
    return st == 0 and not (soh and th < INFINITY)


cdef struct Rng:
    uint64_t key
    uint64_t ctr


cdef inline double uniform(Rng* r) noexcept nogil:
    r.ctr += 1
    return (<double>(mix64(r.key + r.ctr * GOLDEN) >> 11) + 0.5) * INV_2_53


cdef inline double normal(Rng* r) noexcept nogil:
    cdef double u1 = uniform(r)
    cdef double u2 = uniform(r)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


def uniforms(uint64_t seed, uint64_t path, Py_ssize_t n):
    cdef Rng r
    r.key = path_key(seed, path)
    r.ctr = 0
    out = np.empty(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = uniform(&r)
    return out


# ---------------------------------------------------------------------------
# Euler scheme


cdef struct EParams:
    double theta
    double d
    double v
    double lo
    double hi
    double horizon
    double dt
    double rel
    int nat
    double* az
    double* aw
    double st_alpha
    double st_delta
    double st_mass
    double kill
    double lam_tot
    double hit_y
    int stop_on_hit
    int64_t max_sub
    double clock_theta
    double clock_stop


cdef inline bint step_ok(EParams* p, int K, int* status, double* t_hit, double* x, double* R,
                         double h) noexcept nogil:
    cdef int k
    cdef double lim
    for k in range(K):
        if live(status[k], t_hit[k], p.stop_on_hit):
            lim = p.rel * x[k]
            if R[k] * h * fabs(p.d) > lim or R[k] * h * p.v > lim * lim:
                return False
    return True


cdef int _euler_one(EParams* p, int K, double* x0, uint64_t seed, uint64_t path, int nobs, double* obs_t,
                    double* x, int* status, double* t_low, double* t_high, signed char* killed, double* t_hit,
                    double* jump, double* R, double* obs, double* t_end, int64_t* substeps_out,
                    int64_t* clips_out, signed char* capped_out,
                    int rec_cap, int* rec_n, double* rec_t, double* rec_x, double* rec_j) noexcept nogil:
    cdef Rng rng
    rng.key = path_key(seed, path)
    rng.ctr = 0
    cdef int k, i, j_obs = 0, L
    cdef int64_t kstep = 0, substeps = 0, clips = 0, pos, total = (<int64_t>1) << LMAX
    cdef signed char capped = 0
    cdef bint done, chosen
    cdef double clock = 0.0
    cdef double t = 0.0, T0, hout, h, Rmax, lim, N, rate, s, umark, utype, z, acc, xold, xc, xn
    cdef double d = p.d, v = p.v, lo = p.lo, hi = p.hi, hit_y = p.hit_y, theta = p.theta

    for k in range(K):
        x[k] = x0[k]
        status[k] = 0
        t_low[k] = INFINITY
        t_high[k] = INFINITY
        killed[k] = 0
        t_hit[k] = INFINITY
        if hit_y >= 0.0 and x[k] <= hit_y:
            t_hit[k] = 0.0
        if x[k] <= lo:
            status[k] = 1
            t_low[k] = 0.0
            x[k] = 0.0
        elif x[k] >= hi:
            status[k] = 2
            t_high[k] = 0.0
            x[k] = INFINITY
    if rec_cap > 0:
        rec_t[0] = 0.0
        for k in range(K):
            rec_x[k] = x[k]
        rec_j[0] = 0.0
        rec_n[0] = 1

    while True:
        done = True
        for k in range(K):
            if live(status[k], t_hit[k], p.stop_on_hit):
                done = False
        if done:
            break
        T0 = kstep * p.dt
        if T0 >= p.horizon:
            break
        hout = p.horizon - T0
        if p.dt < hout:
            hout = p.dt
        L = 0
        pos = 0
        while pos < total:
            t = T0 + hout * (<double>pos / <double>total)
            Rmax = 0.0
            for k in range(K):
                if live(status[k], t_hit[k], p.stop_on_hit):
                    if theta == 0.0:
                        R[k] = 1.0
                    else:
                        R[k] = pow(x[k], theta)
                    if R[k] > Rmax:
                        Rmax = R[k]
                else:
                    R[k] = 0.0
            if p.rel > 0.0:
                # coarsest dyadic step aligned with pos that meets the relative bound
                while (L > 0 and (pos & ((<int64_t>1 << (LMAX - L + 1)) - 1)) == 0
                       and step_ok(p, K, status, t_hit, x, R, ldexp(hout, -(L - 1)))):
                    L -= 1
                while L < LMAX and not step_ok(p, K, status, t_hit, x, R, ldexp(hout, -L)):
                    L += 1
            h = ldexp(hout, -L)
            while j_obs < nobs and obs_t[j_obs] < t + h - OBS_EPS * h:
                for k in range(K):
                    obs[k * nobs + j_obs] = x[k]
                j_obs += 1

            N = 0.0
            if v > 0.0:
                N = normal(&rng)
            for k in range(K):
                jump[k] = 0.0
            if p.lam_tot > 0.0 and Rmax > 0.0:
                rate = p.lam_tot * Rmax
                s = -log(uniform(&rng)) / rate
                while s < h:
                    umark = uniform(&rng) * Rmax
                    utype = uniform(&rng) * p.lam_tot
                    z = INFINITY
                    acc = 0.0
                    chosen = False
                    for i in range(p.nat):
                        acc += p.aw[i]
                        if utype < acc:
                            z = p.az[i]
                            chosen = True
                            break
                    if not chosen:
                        acc += p.st_mass
                        if utype < acc:
                            z = p.st_delta * pow(uniform(&rng), -1.0 / p.st_alpha)
                        else:
                            z = INFINITY
                    for k in range(K):
                        if live(status[k], t_hit[k], p.stop_on_hit) and umark <= R[k]:
                            jump[k] += z
                    s += -log(uniform(&rng)) / rate

            if p.clock_stop < INFINITY and status[0] == 0:
                clock += pow(x[0], -p.clock_theta) * h
            for k in range(K):
                if not live(status[k], t_hit[k], p.stop_on_hit):
                    continue
                xold = x[k]
                xc = xold + d * R[k] * h + sqrt(v * R[k] * h) * N
                if hit_y >= 0.0 and t_hit[k] == INFINITY and xc <= hit_y:
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
                    if jump[k] == INFINITY:
                        killed[k] = 1
                    x[k] = INFINITY
                else:
                    x[k] = xn
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
            pos += (<int64_t>1) << (LMAX - L)
            substeps += 1
            if rec_cap > 0:
                if rec_n[0] >= rec_cap:
                    return -1
                rec_t[rec_n[0]] = T0 + hout * (<double>pos / <double>total)
                for k in range(K):
                    rec_x[rec_n[0] * K + k] = x[k]
                rec_j[rec_n[0]] = jump[0]
                rec_n[0] += 1
            if substeps >= p.max_sub:
                capped = 1
                break
            done = True
            for k in range(K):
                if live(status[k], t_hit[k], p.stop_on_hit):
                    done = False
            if clock >= p.clock_stop:
                done = True
            if done:
                break
        if capped or done:
            t = T0 + hout * (<double>pos / <double>total)
            break
        kstep += 1
        t = kstep * p.dt

    while j_obs < nobs:
        for k in range(K):
            obs[k * nobs + j_obs] = x[k]
        j_obs += 1
    t_end[0] = t
    substeps_out[0] = substeps
    clips_out[0] = clips
    capped_out[0] = capped
    return 0


def euler_batch(params, x0, obs_t, uint64_t seed, Py_ssize_t start, Py_ssize_t stop,
                double[:, ::1] t_low, double[:, ::1] t_high, signed char[:, ::1] killed, double[:, ::1] t_hit,
                double[:, ::1] x_fin, double[:, :, ::1] obs, double[::1] t_end, int64_t[::1] substeps,
                int64_t[::1] clips, signed char[::1] capped, record=None):
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[::1] obsv = np.ascontiguousarray(obs_t, dtype=np.float64)
    cdef double[::1] azv = np.ascontiguousarray(params["atom_z"], dtype=np.float64)
    cdef double[::1] awv = np.ascontiguousarray(params["atom_w"], dtype=np.float64)
    cdef int K = x0v.shape[0]
    cdef int nobs = obsv.shape[0]
    cdef EParams p
    p.theta = params["theta"]
    p.d = params["drift"]
    p.v = params["var"]
    p.lo = params["lo"]
    p.hi = params["hi"]
    p.horizon = params["horizon"]
    p.dt = params["dt"]
    p.rel = params["rel_step"]
    p.nat = azv.shape[0]
    p.az = &azv[0] if p.nat > 0 else NULL
    p.aw = &awv[0] if p.nat > 0 else NULL
    p.st_alpha = params["st_alpha"]
    p.st_delta = params["st_delta"]
    p.st_mass = params["st_mass"]
    p.kill = params["kill"]
    p.lam_tot = params["lam_tot"]
    p.hit_y = params["hit_y"]
    p.stop_on_hit = 1 if params["stop_on_hit"] else 0
    p.max_sub = params["max_substeps"]
    p.clock_theta = params.get("clock_theta", 0.0)
    p.clock_stop = params.get("clock_stop", INFINITY)

    cdef double* x = <double*> malloc(K * sizeof(double))
    cdef int* status = <int*> malloc(K * sizeof(int))
    cdef double* jump = <double*> malloc(K * sizeof(double))
    cdef double* R = <double*> malloc(K * sizeof(double))
    cdef double* obs_buf = <double*> malloc((K * nobs + 1) * sizeof(double))
    cdef double dummy_obs = 0.0
    cdef double* obs_t_ptr = &obsv[0] if nobs > 0 else &dummy_obs
    cdef Py_ssize_t path, r
    cdef int k, jj, rc = 0
    cdef int rec_cap = 0
    cdef int rec_n = 0
    cdef double[::1] rt
    cdef double[::1] rx
    cdef double[::1] rj
    cdef double* rtp = NULL
    cdef double* rxp = NULL
    cdef double* rjp = NULL
    if record is not None:
        rec_cap = record["capacity"]
        rt = np.empty(rec_cap)
        rx = np.empty(rec_cap * K)
        rj = np.empty(rec_cap)
        rtp = &rt[0]
        rxp = &rx[0]
        rjp = &rj[0]
    try:
        with nogil:
            for path in range(start, stop):
                r = path - start
                rc = _euler_one(&p, K, &x0v[0], seed, path, nobs, obs_t_ptr, x, status,
                                &t_low[r, 0], &t_high[r, 0], &killed[r, 0], &t_hit[r, 0], jump, R, obs_buf,
                                &t_end[r], &substeps[r], &clips[r], &capped[r], rec_cap, &rec_n, rtp, rxp, rjp)
                for k in range(K):
                    x_fin[r, k] = x[k]
                    for jj in range(nobs):
                        obs[r, k, jj] = obs_buf[k * nobs + jj]
        if record is not None:
            if rc < 0:
                record["overflow"] = True
            else:
                record["overflow"] = False
                record["t"] = np.asarray(rt)[:rec_n].copy()
                record["x"] = np.asarray(rx)[:rec_n * K].reshape(rec_n, K).copy()
                record["jump"] = np.asarray(rj)[1:rec_n].copy()
    finally:
        free(x)
        free(status)
        free(jump)
        free(R)
        free(obs_buf)


# ---------------------------------------------------------------------------
# exact chain simulation


def gillespie_batch(long long i0, double theta, double rate_scale, ks, cum, double horizon, obs_t,
                    uint64_t seed, Py_ssize_t start, Py_ssize_t stop, long long i_cap, long long max_events,
                    double[::1] t0, double[::1] tinf, int64_t[::1] events, signed char[::1] capped,
                    int64_t[::1] i_fin, int64_t[:, ::1] obs, record=None):
    if record is not None:
        raise NotImplementedError("single-path recording uses the Python kernel")
    cdef int64_t[::1] ksv = np.ascontiguousarray(ks, dtype=np.int64)
    cdef double[::1] cumv = np.ascontiguousarray(cum, dtype=np.float64)
    cdef double[::1] obsv = np.ascontiguousarray(obs_t, dtype=np.float64)
    cdef int ncum = cumv.shape[0]
    cdef int nobs = obsv.shape[0]
    cdef double fin = cumv[ncum - 1] if ncum > 0 else 0.0
    # holding-rate table for the states a path visits most
    cdef Py_ssize_t ntab = min(max(4 * i0 + 16, 1024), 1 << 24)
    cdef double[::1] tab = np.empty(ntab)
    cdef Py_ssize_t ii
    for ii in range(ntab):
        tab[ii] = rate_scale * pow(<double>ii, theta)
    cdef Py_ssize_t path, r
    cdef Rng rng
    cdef long long i
    cdef double t, tn, u, rate
    cdef int64_t ev
    cdef signed char cap
    cdef int j, lo_, hi_, mid
    with nogil:
        for path in range(start, stop):
            r = path - start
            rng.key = path_key(seed, path)
            rng.ctr = 0
            i = i0
            t = 0.0
            ev = 0
            cap = 0
            j = 0
            t0[r] = INFINITY
            tinf[r] = INFINITY
            while True:
                if i == 0:
                    t0[r] = t
                    break
                if i < ntab:
                    rate = tab[i]
                else:
                    rate = rate_scale * pow(<double>i, theta)
                tn = t + -log(uniform(&rng)) / rate
                while j < nobs and obsv[j] < tn:
                    obs[r, j] = i
                    j += 1
                if tn >= horizon:
                    break
                t = tn
                u = uniform(&rng)
                ev += 1
                if u >= fin:
                    i = -1
                    tinf[r] = t
                else:
                    # first index with cum > u (bisect_right)
                    lo_ = 0
                    hi_ = ncum
                    while lo_ < hi_:
                        mid = (lo_ + hi_) // 2
                        if u < cumv[mid]:
                            hi_ = mid
                        else:
                            lo_ = mid + 1
                    i = i + ksv[lo_] - 1
                    if i >= i_cap:
                        i = -1
                        tinf[r] = t
                        cap = 2
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
