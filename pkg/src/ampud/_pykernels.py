"""Pure numpy implementations of the hot loops.

These define the reference semantics; ``_ckernels.pyx`` mirrors them
statement for statement.  Both backends expose the same four functions.
"""
import bisect

import numpy as np

TINY = 1e-300
LOG_2PI = np.log(2.0 * np.pi)

# Keep the per-component density matrix only below this many doubles.
_DENSITY_CACHE_LIMIT = 20_000_000
# An incremental mixture-density update that loses more than this fraction of
# the old value is recomputed from scratch at that point.
CANCEL_RATIO = 1e-8
# A component whose responsibility mass exceeds the weight penalty by no more
# than this relative margin is removed; the surplus is rounding noise.
SUPPORT_TOL = 1e-9


def _npdf(q, mu, tau):
    return np.exp(-0.5 * (q - mu) ** 2 / tau) / np.sqrt(2.0 * np.pi * tau)


def init_scan(q, means, threshold):
    """Append a mean at every symbol farther than ``threshold`` from all means.

    Symbols are visited in their original order.  Returns the extended means
    (initial ones first, then additions in scan order).
    """
    out = [float(m) for m in means]
    srt = sorted(out)
    for x in np.asarray(q, dtype=float).tolist():
        i = bisect.bisect_left(srt, x)
        d = np.inf
        if i < len(srt):
            d = srt[i] - x
        if i > 0:
            d = min(d, x - srt[i - 1])
        if d > threshold:
            srt.insert(i, x)
            out.append(x)
    return np.array(out, dtype=float)


def _fresh_density(q, alpha, mu, tau, dens):
    g = np.zeros_like(q)
    for s in range(len(alpha)):
        d = _npdf(q, mu[s], tau[s])
        if dens is not None:
            dens[s] = d
        g += alpha[s] * d
    return g


def _refresh(g, g_old, q, alpha, mu, tau, dens, rows):
    bad = np.flatnonzero(g <= CANCEL_RATIO * g_old)
    if bad.size:
        acc = np.zeros(bad.size)
        for k in range(len(alpha)):
            dk = dens[rows[k], bad] if dens is not None else _npdf(q[bad], mu[k], tau[k])
            acc += alpha[k] * dk
        g[bad] = acc
    return g


def _mml_cost(g, alpha, n, half_npars):
    return (-np.sum(np.log(np.maximum(g, TINY)))
            + half_npars * np.sum(np.log(n * alpha))
            + 0.5 * len(alpha) * np.log(n))


def em_sweeps(q, alpha, mu, var, sigma_v_sq, latent, kill_ratio, floor_ratio,
              half_npars, rel_tol, max_iters):
    """Component-wise EM sweeps until the MML cost settles.

    ``var`` holds the fitted noisy-data variances when ``latent`` is False and
    the clean-signal variances when it is True.  Returns
    ``(alpha, mu, var, costs, converged)`` where ``costs[0]`` is the cost of
    the starting point and ``costs[i]`` the cost after sweep ``i``.
    Raises ``ValueError`` if every component is removed.
    """
    q = np.ascontiguousarray(q, dtype=float)
    alpha = list(np.asarray(alpha, dtype=float))
    mu = list(np.asarray(mu, dtype=float))
    var = list(np.asarray(var, dtype=float))
    n = q.size
    sv = float(sigma_v_sq)
    S = len(alpha)
    cache = S * n <= _DENSITY_CACHE_LIMIT

    def taus():
        return [v + sv for v in var] if latent else list(var)

    dens = np.empty((S, n)) if cache else None
    g = _fresh_density(q, alpha, mu, taus(), dens)
    costs = [_mml_cost(g, np.array(alpha), n, half_npars)]
    rows = list(range(S))
    converged = False
    for _ in range(max_iters):
        s = 0
        while s < len(alpha):
            tau_s = var[s] + sv if latent else var[s]
            d = dens[rows[s]] if cache else _npdf(q, mu[s], tau_s)
            w = alpha[s] * d / np.maximum(g, TINY)
            W = w.sum()
            kill = not W > 0.0
            m_new = v_new = 0.0
            if not kill:
                # Weighted moments about the current mean.
                z = q - mu[s]
                m1 = np.dot(w, z) / W
                spread = max(np.dot(w, z * z) / W - m1 * m1, 0.0)
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
            surplus = W - half_npars
            a_raw = surplus / n if surplus > SUPPORT_TOL * W else 0.0
            tau_new = v_new + sv if latent else v_new
            if a_raw <= 0.0 or not tau_new > 0.0 or not np.isfinite(tau_new):
                kill = True
            if kill:
                if len(alpha) == 1:
                    raise ValueError("all mixture components were removed")
                a_s = alpha[s]
                g_old = g
                g = (g - a_s * d) / (1.0 - a_s)
                del alpha[s], mu[s], var[s], rows[s]
                alpha = [a / (1.0 - a_s) for a in alpha]
                g = _refresh(g, g_old, q, alpha, mu, taus(), dens, rows)
                continue
            d_new = _npdf(q, m_new, tau_new)
            z = 1.0 - alpha[s] + a_raw
            g_old = g
            g = (g - alpha[s] * d + a_raw * d_new) / z
            if cache:
                dens[rows[s]] = d_new
            alpha[s] = a_raw
            alpha = [a / z for a in alpha]
            mu[s] = m_new
            var[s] = v_new
            g = _refresh(g, g_old, q, alpha, mu, taus(), dens, rows)
            s += 1
        if cache:
            g = np.zeros_like(q)
            for s in range(len(alpha)):
                g += alpha[s] * dens[rows[s]]
        else:
            g = _fresh_density(q, alpha, mu, taus(), None)
        cost = _mml_cost(g, np.array(alpha), n, half_npars)
        prev = costs[-1]
        costs.append(cost)
        if abs(cost - prev) <= rel_tol * abs(prev):
            converged = True
            break
    return np.array(alpha), np.array(mu), np.array(var), np.array(costs), converged


def gm_denoise(q, alpha, mu, var, sigma_v_sq):
    """Posterior mean and its derivative under a GM prior observed in AWGN.

    Uses the ratio forms f/g and (f'g - fg')/g^2 with every term scaled by a
    common per-sample factor, which leaves both ratios unchanged.
    """
    q = np.asarray(q, dtype=float)
    alpha = np.asarray(alpha, dtype=float)[:, None]
    mu = np.asarray(mu, dtype=float)[:, None]
    var = np.asarray(var, dtype=float)[:, None]
    tau = var + sigma_v_sq
    diff = q[None, :] - mu
    logn = np.log(alpha) - 0.5 * (LOG_2PI + np.log(tau)) - 0.5 * diff ** 2 / tau
    nrm = np.exp(logn - logn.max(axis=0))
    wiener = var / tau * diff + mu
    g = nrm.sum(axis=0)
    f = (nrm * wiener).sum(axis=0)
    fp = (nrm * ((var + mu ** 2 - q[None, :] * mu) / tau
                 - var * diff ** 2 / tau ** 2)).sum(axis=0)
    gp = (nrm * (-diff / tau)).sum(axis=0)
    return f / g, (fp * g - f * gp) / g ** 2


def gm_logpdf(q, alpha, mu, var):
    q = np.asarray(q, dtype=float)
    alpha = np.asarray(alpha, dtype=float)[:, None]
    mu = np.asarray(mu, dtype=float)[:, None]
    var = np.asarray(var, dtype=float)[:, None]
    logn = np.log(alpha) - 0.5 * (LOG_2PI + np.log(var)) - 0.5 * (q[None, :] - mu) ** 2 / var
    top = logn.max(axis=0)
    return top + np.log(np.exp(logn - top).sum(axis=0))
