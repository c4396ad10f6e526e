# Compiled versions of the hot loops in _pykernels.py; same semantics.
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY, isfinite

cnp.import_array()

cdef double TINY = 1e-300
cdef double TWO_PI = 6.283185307179586
cdef double LOG_2PI = 1.8378770664093453
cdef Py_ssize_t DENSITY_CACHE_LIMIT = 20000000
cdef double CANCEL_RATIO = 1e-8
cdef double SUPPORT_TOL = 1e-9


def init_scan(double[::1] q, means, double threshold):
    cdef Py_ssize_t n = q.shape[0], i, j, lo, hi, mid, count
    cdef double x, d
    srt_np = np.sort(np.asarray(means, dtype=np.float64))
    cdef Py_ssize_t cap = max(16, 2 * srt_np.shape[0])
    buf = np.empty(cap, dtype=np.float64)
    buf[:srt_np.shape[0]] = srt_np
    cdef double[::1] srt = buf
    count = srt_np.shape[0]
    out = [float(m) for m in means]
    for i in range(n):
        x = q[i]
        lo = 0
        hi = count
        while lo < hi:
            mid = (lo + hi) // 2
            if srt[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        d = INFINITY
        if lo < count:
            d = srt[lo] - x
        if lo > 0 and x - srt[lo - 1] < d:
            d = x - srt[lo - 1]
        if d > threshold:
            if count == cap:
                cap *= 2
                nb = np.empty(cap, dtype=np.float64)
                nb[:count] = buf[:count]
                buf = nb
                srt = buf
            j = count
            while j > lo:
                srt[j] = srt[j - 1]
                j -= 1
            srt[lo] = x
            count += 1
            out.append(x)
    return np.array(out, dtype=np.float64)


cdef inline double npdf(double x, double mu, double tau) nogil:
    cdef double z = x - mu
    return exp(-0.5 * z * z / tau) / sqrt(TWO_PI * tau)


cdef double mml_cost(double[::1] g, double[::1] alpha, Py_ssize_t S, Py_ssize_t n,
                     double half_npars):
    cdef Py_ssize_t i, s
    cdef double c = 0.0, gi
    for i in range(n):
        gi = g[i]
        if gi < TINY:
            gi = TINY
        c -= log(gi)
    for s in range(S):
        c += half_npars * log(n * alpha[s])
    c += 0.5 * S * log(<double>n)
    return c


cdef inline void fill_density(double[::1] q, double m, double tau,
                              double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = q.shape[0]
    cdef double c = 1.0 / sqrt(TWO_PI * tau), k = -0.5 / tau, z
    cdef const double* src = &q[0]
    cdef double* dst = &out[0]
    for i in range(n):
        z = src[i] - m
        dst[i] = c * exp(k * z * z)


cdef void refresh(double[::1] g, Py_ssize_t[::1] bad, Py_ssize_t nbad,
                  double[::1] q, double[::1] alpha, double[::1] mu,
                  double[::1] var, double sv, bint latent, bint cache,
                  double[:, ::1] dens, Py_ssize_t[::1] rows,
                  Py_ssize_t S) noexcept nogil:
    cdef Py_ssize_t j, k, i
    cdef double acc, tau, z
    for j in range(nbad):
        i = bad[j]
        acc = 0.0
        for k in range(S):
            if cache:
                acc += alpha[k] * dens[rows[k], i]
            else:
                tau = var[k] + sv if latent else var[k]
                z = q[i] - mu[k]
                acc += alpha[k] * exp(-0.5 * z * z / tau) / sqrt(TWO_PI * tau)
        g[i] = acc


def em_sweeps(q_in, alpha_in, mu_in, var_in, double sigma_v_sq, bint latent,
              double kill_ratio, double floor_ratio, double half_npars,
              double rel_tol, Py_ssize_t max_iters):
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] alpha = np.array(alpha_in, dtype=np.float64)
    cdef double[::1] mu = np.array(mu_in, dtype=np.float64)
    cdef double[::1] var = np.array(var_in, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], S = alpha.shape[0]
    cdef Py_ssize_t i, s, t, k, row
    cdef double sv = sigma_v_sq
    cdef bint cache = S * n <= DENSITY_CACHE_LIMIT
    cdef double[:, ::1] dens
    cdef double[::1] g = np.zeros(n, dtype=np.float64)
    cdef double[::1] scratch = np.empty(n, dtype=np.float64)
    cdef double[::1] fresh = np.empty(n, dtype=np.float64)
    cdef double[::1] d
    cdef Py_ssize_t[::1] rows = np.arange(S, dtype=np.intp)
    cdef Py_ssize_t[::1] bad = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t nbad
    cdef double gnew
    cdef double tau_s, W, m_new, v_new, a_raw, tau_new, gain, gi
    cdef double a_s, cost, prev, z, inv, wi, m1, m2, spread
    cdef bint kill, converged = False
    if cache:
        dens = np.empty((S, n), dtype=np.float64)
    else:
        dens = np.empty((1, n), dtype=np.float64)

    for s in range(S):
        tau_s = var[s] + sv if latent else var[s]
        d = dens[s] if cache else scratch
        fill_density(q, mu[s], tau_s, d)
        for i in range(n):
            g[i] += alpha[s] * d[i]
    prev = mml_cost(g, alpha, S, n, half_npars)
    costs = [prev]

    for t in range(max_iters):
        s = 0
        while s < S:
            tau_s = var[s] + sv if latent else var[s]
            row = rows[s]
            if cache:
                d = dens[row]
            else:
                d = scratch
                fill_density(q, mu[s], tau_s, d)
            # Responsibility-weighted moments about the current mean.
            W = 0.0
            m1 = 0.0
            m2 = 0.0
            for i in range(n):
                gi = g[i]
                if gi < TINY:
                    gi = TINY
                wi = alpha[s] * d[i] / gi
                z = q[i] - mu[s]
                W += wi
                m1 += wi * z
                m2 += wi * z * z
            kill = not W > 0.0
            m_new = 0.0
            v_new = 0.0
            if not kill:
                m1 = m1 / W
                spread = m2 / W - m1 * m1
                if spread < 0.0:
                    spread = 0.0
                if latent:
                    gain = var[s] / tau_s
                    m_new = mu[s] + gain * m1
                    v_new = sv * var[s] / tau_s + gain * gain * spread
                else:
                    m_new = mu[s] + m1
                    v_new = spread
                    if v_new < kill_ratio * sv:
                        kill = True
                    elif v_new < floor_ratio * sv:
                        v_new = floor_ratio * sv
            a_raw = W - half_npars
            if a_raw <= SUPPORT_TOL * W:
                a_raw = 0.0
            a_raw = a_raw / n
            tau_new = v_new + sv if latent else v_new
            if a_raw <= 0.0 or not tau_new > 0.0 or not isfinite(tau_new):
                kill = True
            if kill:
                if S == 1:
                    raise ValueError("all mixture components were removed")
                a_s = alpha[s]
                inv = 1.0 / (1.0 - a_s)
                nbad = 0
                for i in range(n):
                    gnew = (g[i] - a_s * d[i]) * inv
                    if gnew <= CANCEL_RATIO * g[i]:
                        bad[nbad] = i
                        nbad += 1
                    g[i] = gnew
                for k in range(s, S - 1):
                    alpha[k] = alpha[k + 1]
                    mu[k] = mu[k + 1]
                    var[k] = var[k + 1]
                    rows[k] = rows[k + 1]
                S -= 1
                for k in range(S):
                    alpha[k] = alpha[k] * inv
                refresh(g, bad, nbad, q, alpha, mu, var, sv, latent, cache,
                        dens, rows, S)
                continue
            z = 1.0 - alpha[s] + a_raw
            inv = 1.0 / z
            fill_density(q, m_new, tau_new, fresh)
            nbad = 0
            for i in range(n):
                dn = fresh[i]
                gnew = (g[i] - alpha[s] * d[i] + a_raw * dn) * inv
                if gnew <= CANCEL_RATIO * g[i]:
                    bad[nbad] = i
                    nbad += 1
                g[i] = gnew
                if cache:
                    d[i] = dn
            alpha[s] = a_raw
            for k in range(S):
                alpha[k] = alpha[k] * inv
            mu[s] = m_new
            var[s] = v_new
            refresh(g, bad, nbad, q, alpha, mu, var, sv, latent, cache,
                    dens, rows, S)
            s += 1

        g[:] = 0.0
        for s in range(S):
            if cache:
                d = dens[rows[s]]
            else:
                d = scratch
                fill_density(q, mu[s], var[s] + sv if latent else var[s], d)
            for i in range(n):
                g[i] += alpha[s] * d[i]
        cost = mml_cost(g, alpha, S, n, half_npars)
        costs.append(cost)
        if fabs(cost - prev) <= rel_tol * fabs(prev):
            converged = True
            break
        prev = cost

    return (np.asarray(alpha)[:S].copy(), np.asarray(mu)[:S].copy(),
            np.asarray(var)[:S].copy(), np.array(costs), converged)


def gm_denoise(q_in, alpha_in, mu_in, var_in, double sigma_v_sq):
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] alpha = np.ascontiguousarray(alpha_in, dtype=np.float64)
    cdef double[::1] mu = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef double[::1] var = np.ascontiguousarray(var_in, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], S = alpha.shape[0], i, s
    out = np.empty(n, dtype=np.float64)
    dout = np.empty(n, dtype=np.float64)
    cdef double[::1] eta = out
    cdef double[::1] deta = dout
    cdef double[::1] logc = np.empty(S, dtype=np.float64)
    cdef double[::1] tau = np.empty(S, dtype=np.float64)
    cdef double[::1] ln = np.empty(S, dtype=np.float64)
    cdef double top, e, diff, f, g, fp, gp, x
    for s in range(S):
        tau[s] = var[s] + sigma_v_sq
        logc[s] = log(alpha[s]) - 0.5 * (LOG_2PI + log(tau[s]))
    with nogil:
        for i in range(n):
            x = q[i]
            top = -INFINITY
            for s in range(S):
                diff = x - mu[s]
                ln[s] = logc[s] - 0.5 * diff * diff / tau[s]
                if ln[s] > top:
                    top = ln[s]
            f = 0.0
            g = 0.0
            fp = 0.0
            gp = 0.0
            for s in range(S):
                e = exp(ln[s] - top)
                diff = x - mu[s]
                g += e
                f += e * (var[s] / tau[s] * diff + mu[s])
                fp += e * ((var[s] + mu[s] * mu[s] - x * mu[s]) / tau[s]
                           - var[s] * diff * diff / (tau[s] * tau[s]))
                gp += e * (-diff / tau[s])
            eta[i] = f / g
            deta[i] = (fp * g - f * gp) / (g * g)
    return out, dout


def gm_logpdf(q_in, alpha_in, mu_in, var_in):
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] alpha = np.ascontiguousarray(alpha_in, dtype=np.float64)
    cdef double[::1] mu = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef double[::1] var = np.ascontiguousarray(var_in, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], S = alpha.shape[0], i, s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double[::1] logc = np.empty(S, dtype=np.float64)
    cdef double[::1] ln = np.empty(S, dtype=np.float64)
    cdef double top, acc, diff
    for s in range(S):
        logc[s] = log(alpha[s]) - 0.5 * (LOG_2PI + log(var[s]))
    with nogil:
        for i in range(n):
            top = -INFINITY
            for s in range(S):
                diff = q[i] - mu[s]
                ln[s] = logc[s] - 0.5 * diff * diff / var[s]
                if ln[s] > top:
                    top = ln[s]
            acc = 0.0
            for s in range(S):
                acc += exp(ln[s] - top)
            res[i] = top + log(acc)
    return out
