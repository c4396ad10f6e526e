"""State evolution: predicted AMP noise variances and the tracking harness."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr

from . import kernels
from .amp import run_amp
from .sources import MeasurementSystem, derive_seed, generate_signal, measure
from .window import mc_mse

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def laplace_posterior(q, s_sq, sparsity, b=1.0 / np.sqrt(2.0)):
    """Density of Q = X + N(0, s_sq) and E[X|Q] for X ~ sparsity*Laplace(b) + rest*delta0."""
    q = np.asarray(q, dtype=float)
    s = np.sqrt(s_sq)
    shift = s_sq / b
    base = -np.log(2 * b) + s_sq / (2 * b * b)
    m_pos, m_neg = q - shift, q + shift
    u, v = m_pos / s, -m_neg / s
    log_a_pos = base - q / b + log_ndtr(u)
    log_a_neg = base + q / b + log_ndtr(v)
    mills_u = np.exp(-0.5 * u * u - LOG_SQRT_2PI - log_ndtr(u))
    mills_v = np.exp(-0.5 * v * v - LOG_SQRT_2PI - log_ndtr(v))
    a_pos, a_neg = np.exp(log_a_pos), np.exp(log_a_neg)
    slab = a_pos + a_neg
    first = a_pos * (m_pos + s * mills_u) + a_neg * (m_neg - s * mills_v)
    spike = np.exp(-0.5 * q * q / s_sq - LOG_SQRT_2PI - 0.5 * np.log(s_sq))
    dens = (1 - sparsity) * spike + sparsity * slab
    return dens, sparsity * first / dens


def mmse_sparse_laplace(s_sq, sparsity=0.03):
    """MMSE of the sparse unit-variance Laplace prior through AWGN of variance ``s_sq``."""
    s = np.sqrt(s_sq)

    def integrand(q):
        dens, mean = laplace_posterior(q, s_sq, sparsity)
        return mean * mean * dens

    edges = [0.0, 10 * s, 20 * s + 10, 60 * s + 60]
    tot = sum(integrate.quad(integrand, a, b, limit=400, epsabs=1e-14, epsrel=1e-11)[0]
              for a, b in zip(edges[:-1], edges[1:]))
    tot += integrate.quad(integrand, edges[-1], np.inf, limit=200)[0]
    return sparsity - 2.0 * tot


def mmse_gm(gm, s_sq):
    """MMSE of a GM prior through AWGN of variance ``s_sq`` by adaptive quadrature."""
    tau = gm.sigma_sq + s_sq
    sd = np.sqrt(tau.max())
    lo, hi = gm.mu.min() - 40 * sd, gm.mu.max() + 40 * sd
    noisy = gm.convolve(s_sq)

    def integrand(q):
        eta, _ = kernels.gm_denoise(np.array([q]), gm.alpha, gm.mu, gm.sigma_sq, s_sq)
        return eta[0] ** 2 * noisy.pdf(np.array([q]))[0]

    pts = np.unique(np.clip(np.concatenate([gm.mu, gm.mu - np.sqrt(tau),
                                            gm.mu + np.sqrt(tau)]), lo, hi))
    val = integrate.quad(integrand, lo, hi, points=pts[(pts > lo) & (pts < hi)],
                         limit=2000, epsabs=1e-14, epsrel=1e-11)[0]
    return gm.second_moment() - val


def se_recursion(mse_fn, R, sigma_z_sq, sigma0_sq, t_max):
    """sigma_t^2 for t = 0..t_max under sigma_{t+1}^2 = sigma_z^2 + mse_fn(sigma_t^2)/R."""
    out = [float(sigma0_sq)]
    for _ in range(t_max):
        out.append(sigma_z_sq + mse_fn(out[-1]) / R)
    return np.array(out)


def se_fixed_point(mse_fn, R, sigma_z_sq, sigma0_sq, tol=1e-4, max_iter=10_000):
    """Iterate the recursion until the relative change drops below ``tol``."""
    s = float(sigma0_sq)
    for _ in range(max_iter):
        nxt = sigma_z_sq + mse_fn(s) / R
        if abs(nxt - s) <= tol * s:
            return nxt
        s = nxt
    raise RuntimeError("state evolution did not settle")


@dataclass
class SETrace:
    """Predicted variances, predicted/empirical MSE per iteration, and run metadata."""
    sigma_sq: np.ndarray
    mse_predicted: np.ndarray
    mse_stderr: np.ndarray
    mse_empirical: np.ndarray = None
    mse_empirical_stderr: np.ndarray = None
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def deviation_db(self):
        return 10 * np.log10(self.mse_empirical / self.mse_predicted)

    def max_deviation_db(self):
        return float(np.max(np.abs(self.deviation_db())))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "sigma_sq_predicted", "mse_empirical_mean", "mse_empirical_stderr"])
            for t in range(self.mse_predicted.size):
                emp = "" if self.mse_empirical is None else f"{self.mse_empirical[t]:.10g}"
                err = "" if self.mse_empirical_stderr is None else f"{self.mse_empirical_stderr[t]:.10g}"
                w.writerow([t, f"{self.sigma_sq[t]:.10g}", emp, err])


def mc_mse_precise(spec, denoiser, sigma_v_sq, n_mc, seed, rel_se=0.02, max_chunks=16):
    """:func:`mc_mse` over independent chunks of ``n_mc`` until stderr < ``rel_se`` * MSE."""
    tot, var, n = 0.0, 0.0, 0
    for c in range(max_chunks):
        m, e = mc_mse(spec, denoiser, sigma_v_sq, n_mc, derive_seed(seed, c))
        tot += m * n_mc
        var += (e * n_mc) ** 2
        n += n_mc
        mean, err = tot / n, np.sqrt(var) / n
        if err < rel_se * mean:
            break
    return mean, err


def se_predict(spec, denoiser, R, sigma_z_sq, t_max, n_mc=1_000_000, seed=0, sigma0_sq=None,
               rel_se=0.02):
    """Monte-Carlo state evolution for a sequence denoiser.

    Entry t of ``mse_predicted`` is the predicted MSE of the estimate produced
    by iteration t, i.e. MSE(eta, sigma_t^2).  Each entry uses at least
    ``n_mc`` samples and more (in chunks of ``n_mc``, up to 16) until its
    standard error is below ``rel_se`` of the estimate.
    """
    if n_mc < 100_000:
        raise ValueError("n_mc must be at least 1e5")
    s = spec.second_moment() / R + sigma_z_sq if sigma0_sq is None else float(sigma0_sq)
    sig, mse, err = [s], [], []
    diverged = False
    for t in range(t_max):
        m, e = mc_mse_precise(spec, denoiser, sig[-1], n_mc, derive_seed(seed, t), rel_se)
        mse.append(m)
        err.append(e)
        sig.append(sigma_z_sq + m / R)
        if sig[-1] > 10 * sig[0]:
            diverged = True
            break
    return SETrace(np.array(sig), np.array(mse), np.array(err), diverged=diverged,
                   meta={"R": R, "sigma_z_sq": sigma_z_sq, "n_mc": n_mc, "seed": seed})


def verify_tracking(spec, denoiser, sys, n_trials, seed, t_max=20, n_mc=1_000_000, snr=None):
    """Average per-iteration AMP MSE over trials and pair it with the SE prediction.

    Each trial draws its own signal, matrix and noise from ``seed``.
    """
    emp = []
    for trial in range(n_trials):
        tseed = derive_seed(seed, trial)
        x = generate_signal(spec, sys.N, derive_seed(tseed, 0))
        tsys = MeasurementSystem(sys.M, sys.N, sys.sigma_z_sq, derive_seed(tseed, 1))
        op = tsys.operator()
        y = measure(x, tsys, derive_seed(tseed, 2), op)
        res = run_amp(y, op, denoiser, None, t_max, x_true=x)
        emp.append(res.column("mse")[1:])
    emp = np.array(emp)
    tr = se_predict(spec, denoiser, sys.R, sys.sigma_z_sq, t_max, n_mc, derive_seed(seed, 10 ** 6))
    tr.mse_empirical = emp.mean(axis=0)
    tr.mse_empirical_stderr = emp.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 \
        else np.zeros(t_max)
    tr.meta.update(N=sys.N, M=sys.M, trials=n_trials, snr_db=snr, source=spec.kind)
    return tr
