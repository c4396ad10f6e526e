"""Bayesian sliding-window denoisers for the MGauss and M4 Markov sources.

The posterior of the center symbol given a (2k+1)-window is summed over all
hidden paths inside the window.  The sum is organized as a forward/backward
pass over window positions, which gives the same value as enumerating the
paths one by one, in log domain throughout.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from .sources import generate_signal, rng_for

MAX_K = 8
LOG_2PI = np.log(2.0 * np.pi)


def _lognorm(q, mu, var):
    return -0.5 * (LOG_2PI + np.log(var) + (q - mu) ** 2 / var)


def _check_k(k):
    if not 0 <= k <= MAX_K:
        raise ValueError(f"half-window k must lie in [0, {MAX_K}]")


def windows(q, k):
    """(N, 2k+1) windows centered on each symbol, median-filled past the ends."""
    q = np.asarray(q, dtype=float)
    pad = np.full(k, np.median(q))
    return sliding_window_view(np.concatenate([pad, q, pad]), 2 * k + 1)


def _center_posterior(log_em, log_trans, log_init, center):
    """Log posterior over hidden states at ``center``; shapes (B, W, S) -> (B, S)."""
    B, W, S = log_em.shape
    fwd = log_init[None, :] + log_em[:, 0, :]
    for i in range(1, center + 1):
        fwd = logsumexp(fwd[:, :, None] + log_trans[None, :, :], axis=1) + log_em[:, i, :]
    bwd = np.zeros((B, S))
    for i in range(W - 1, center, -1):
        bwd = logsumexp(log_trans[None, :, :] + (log_em[:, i, :] + bwd)[:, None, :], axis=2)
    post = fwd + bwd
    return post - logsumexp(post, axis=1, keepdims=True)


def _mgauss_parts(spec, win, sigma_v_sq):
    k = (win.shape[1] - 1) // 2
    tau = spec.sigma_x_sq + sigma_v_sq
    log_em = np.stack([_lognorm(win, 0.0, sigma_v_sq), _lognorm(win, spec.mu_x, tau)], axis=-1)
    P = np.array([[1 - spec.p01, spec.p01], [spec.p10, 1 - spec.p10]])
    pi1 = spec.nonzero_prob
    post = _center_posterior(log_em, np.log(P), np.log([1 - pi1, pi1]), k)
    llr = post[:, 1] - post[:, 0]
    return llr, win[:, k], tau


def eta_mgauss(spec, win, sigma_v_sq):
    """E[X_center | window] for MGauss; ``win`` is (2k+1,) or (B, 2k+1)."""
    win = np.asarray(win, dtype=float)
    one = win.ndim == 1
    win = np.atleast_2d(win)
    _check_k((win.shape[1] - 1) // 2)
    llr, qc, tau = _mgauss_parts(spec, win, sigma_v_sq)
    out = expit(llr) * (spec.sigma_x_sq / tau * (qc - spec.mu_x) + spec.mu_x)
    return out[0] if one else out


def eta_mgauss_deriv(spec, win, sigma_v_sq):
    """Partial derivative of :func:`eta_mgauss` with respect to the center value."""
    win = np.atleast_2d(np.asarray(win, dtype=float))
    llr, qc, tau = _mgauss_parts(spec, win, sigma_v_sq)
    p = expit(llr)
    gain = spec.sigma_x_sq / tau
    dllr = -(qc - spec.mu_x) / tau + qc / sigma_v_sq
    return p * (1 - p) * dllr * (gain * (qc - spec.mu_x) + spec.mu_x) + p * gain


# Pair states (x[i-1], x[i]) in the order (-1,-1), (-1,+1), (+1,-1), (+1,+1).
_PAIRS = np.array([(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)])


def m4_transitions(error_prob):
    """Pair-state transition matrix: the next symbol is -x[i-1] unless an error occurs."""
    T = np.zeros((4, 4))
    for a in range(4):
        for b in range(4):
            if _PAIRS[a, 1] != _PAIRS[b, 0]:
                continue
            scheduled = _PAIRS[b, 1] == -_PAIRS[a, 0]
            T[a, b] = 1 - error_prob if scheduled else error_prob
    return T


def _m4_llr(spec, win, sigma_v_sq):
    k = (win.shape[1] - 1) // 2
    if k == 0:
        return 2.0 * win[:, 0] / sigma_v_sq
    lp = _lognorm(win, 1.0, sigma_v_sq)
    lm = _lognorm(win, -1.0, sigma_v_sq)
    # Emission of pair (a, b) at window position i covers symbol i; the first
    # pair also carries symbol 0.
    em = np.where(_PAIRS[None, None, :, 1] > 0, lp[:, 1:, None], lm[:, 1:, None])
    first = np.where(_PAIRS[:, 0] > 0, lp[:, :1], lm[:, :1])
    em[:, 0, :] += first
    with np.errstate(divide="ignore"):
        log_trans = np.log(m4_transitions(spec.error_prob))
    post = _center_posterior(em, log_trans, np.log(np.full(4, 0.25)), k - 1)
    plus = logsumexp(post[:, _PAIRS[:, 1] > 0], axis=1)
    minus = logsumexp(post[:, _PAIRS[:, 1] < 0], axis=1)
    return plus - minus


def eta_m4(spec, win, sigma_v_sq):
    """E[X_center | window] for M4, in (-1, 1)."""
    win = np.asarray(win, dtype=float)
    one = win.ndim == 1
    win = np.atleast_2d(win)
    _check_k((win.shape[1] - 1) // 2)
    out = np.tanh(0.5 * _m4_llr(spec, win, sigma_v_sq))
    return out[0] if one else out


def eta_m4_deriv(spec, win, sigma_v_sq):
    eta = eta_m4(spec, np.atleast_2d(np.asarray(win, dtype=float)), sigma_v_sq)
    return (1.0 - eta ** 2) / sigma_v_sq


class WindowDenoiser:
    """Sequence denoiser ``(q, sigma_v_sq) -> (eta, deta)`` for AMP and SE runs."""

    def __init__(self, spec, k):
        _check_k(k)
        if spec.kind not in ("MGauss", "M4"):
            raise ValueError("window denoisers exist for MGauss and M4 only")
        self.spec, self.k = spec, k

    def __call__(self, q, sigma_v_sq):
        win = windows(q, self.k)
        if self.spec.kind == "MGauss":
            return (eta_mgauss(self.spec, win, sigma_v_sq),
                    eta_mgauss_deriv(self.spec, win, sigma_v_sq))
        return eta_m4(self.spec, win, sigma_v_sq), eta_m4_deriv(self.spec, win, sigma_v_sq)


def batch_stderr(err, batch=1000):
    """Standard error of ``mean(err)`` from batch means (handles serial correlation)."""
    err = np.asarray(err, dtype=float)
    nb = err.size // batch
    if nb < 2:
        return float(np.std(err, ddof=1) / np.sqrt(err.size))
    means = err[:nb * batch].reshape(nb, batch).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(nb))


def mc_mse(spec, denoiser, sigma_v_sq, n_mc, seed, margin=16):
    """Monte-Carlo MSE of a sequence denoiser on ``spec`` through AWGN.

    ``margin`` symbols at both ends are simulated but not scored, so the
    estimate reflects interior windows.  Returns ``(mse, stderr)``.
    """
    n = n_mc + 2 * margin
    x = generate_signal(spec, n, seed)
    q = x + np.sqrt(sigma_v_sq) * rng_for(seed, 1).standard_normal(n)
    eta, _ = denoiser(q, sigma_v_sq)
    err = ((eta - x) ** 2)[margin:n - margin]
    return float(err.mean()), batch_stderr(err)


def window_mse(spec, k, sigma_v_sq, n_mc=100_000, seed=0):
    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 1e4")
    return mc_mse(spec, WindowDenoiser(spec, k), sigma_v_sq, n_mc, seed)
