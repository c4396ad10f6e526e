"""Scalar Gaussian mixtures: representation, noisy-data EM, and the i.i.d. denoiser."""
import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .sources import rng_for


class DegenerateFitError(ValueError):
    """Raised when EM removes every mixture component."""


class GaussianMixture:
    """Weights, means and variances of a 1-D mixture.

    A zero variance stands for a point mass; such a mixture can only be used
    after convolving with channel noise.
    """

    def __init__(self, alpha, mu, sigma_sq, normalize=False):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float)).copy()
        mu = np.atleast_1d(np.asarray(mu, dtype=float)).copy()
        sigma_sq = np.atleast_1d(np.asarray(sigma_sq, dtype=float)).copy()
        if not alpha.shape == mu.shape == sigma_sq.shape or alpha.ndim != 1:
            raise ValueError("alpha, mu and sigma_sq must be equal-length vectors")
        if alpha.size == 0:
            raise ValueError("a mixture needs at least one component")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(mu))
                and np.all(np.isfinite(sigma_sq))):
            raise ValueError("mixture parameters must be finite")
        if np.any(alpha <= 0):
            raise ValueError("mixture weights must be positive")
        if np.any(sigma_sq < 0):
            raise ValueError("mixture variances must be nonnegative")
        if normalize:
            alpha /= alpha.sum()
        elif abs(alpha.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {alpha.sum()!r}, not 1")
        self.alpha, self.mu, self.sigma_sq = alpha, mu, sigma_sq

    @property
    def S(self):
        return self.alpha.size

    @property
    def components(self):
        return list(zip(self.alpha.tolist(), self.mu.tolist(), self.sigma_sq.tolist()))

    def __repr__(self):
        return f"GaussianMixture(S={self.S})"

    def __eq__(self, other):
        return (isinstance(other, GaussianMixture)
                and np.array_equal(self.alpha, other.alpha)
                and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.sigma_sq, other.sigma_sq))

    def mean(self):
        return float(np.dot(self.alpha, self.mu))

    def second_moment(self):
        return float(np.dot(self.alpha, self.sigma_sq + self.mu ** 2))

    def variance(self):
        return self.second_moment() - self.mean() ** 2

    def convolve(self, sigma_v_sq):
        """Mixture of X + V with V ~ N(0, sigma_v_sq)."""
        return GaussianMixture(self.alpha, self.mu, self.sigma_sq + sigma_v_sq)

    def _check_pointwise(self, x):
        delta = self.sigma_sq == 0
        if np.any(delta):
            if np.any(np.isin(x, self.mu[delta])):
                raise ValueError("density evaluated at a point mass; convolve first")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        self._check_pointwise(x)
        keep = self.sigma_sq > 0
        if not np.any(keep):
            return np.zeros_like(x)
        out = np.exp(kernels.gm_logpdf(np.atleast_1d(x).ravel(), self.alpha[keep],
                                       self.mu[keep], self.sigma_sq[keep]))
        return out.reshape(x.shape)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(self.sigma_sq == 0):
            raise ValueError("log-density of a mixture with point masses; convolve first")
        out = kernels.gm_logpdf(np.atleast_1d(x).ravel(), self.alpha, self.mu, self.sigma_sq)
        return out.reshape(x.shape)

    def sample(self, n, rng):
        comp = rng.choice(self.S, size=n, p=self.alpha)
        return self.mu[comp] + np.sqrt(self.sigma_sq[comp]) * rng.standard_normal(n)

    def to_text(self):
        """One ``alpha mu sigma_sq`` row per component."""
        return "".join(f"{a!r} {m!r} {v!r}\n" for a, m, v in self.components)

    @classmethod
    def from_text(cls, text):
        rows = np.loadtxt(io.StringIO(text), ndmin=2)
        return cls(rows[:, 0], rows[:, 1], rows[:, 2])


def gm_pdf(gm, x):
    return gm.pdf(x)


@dataclass(frozen=True)
class EmConfig:
    """Settings for :func:`fit_gm_noisy`.

    ``max_fit_samples`` caps the number of symbols EM sees; longer inputs are
    fitted on a seeded random subset (None disables the cap).
    """
    variance_kill_ratio: float = 0.2
    variance_floor_ratio: float = 0.9
    init_distance_ratio: float = 0.1
    max_iters: int = 500
    rel_tol: float = 1e-5
    approach: str = "NoisyFit"
    n_init: int = 3
    annihilate: bool = True
    max_fit_samples: int = 100_000

    def __post_init__(self):
        if not 0 < self.variance_kill_ratio < self.variance_floor_ratio < 1:
            raise ValueError("need 0 < variance_kill_ratio < variance_floor_ratio < 1")
        if self.approach not in ("NoisyFit", "LatentEM"):
            raise ValueError(f"unknown approach {self.approach!r}")
        if self.init_distance_ratio <= 0 or self.n_init < 1 or self.max_iters < 1:
            raise ValueError("init_distance_ratio, n_init and max_iters must be positive")


# Two free parameters (mean, variance) per component in the weight update.
HALF_NPARS = 1.0


def initial_means(q, cfg, rng):
    """Means drawn from ``q`` plus one at every symbol far from all current means."""
    start = rng.choice(q, size=min(cfg.n_init, q.size), replace=False)
    return kernels.init_scan(q, start, cfg.init_distance_ratio * np.std(q))


def _sweeps(q, alpha, mu, var, sigma_v_sq, cfg):
    latent = cfg.approach == "LatentEM"
    return kernels.em_sweeps(q, alpha, mu, var, sigma_v_sq, latent,
                             cfg.variance_kill_ratio, cfg.variance_floor_ratio,
                             HALF_NPARS, cfg.rel_tol, cfg.max_iters)


def fit_gm_noisy(q, sigma_v_sq, cfg=None, seed=0, return_info=False, init=None):
    """Learn a GM prior on X from samples of Q = X + N(0, sigma_v_sq).

    Runs component-wise EM from an over-complete start, then repeatedly drops
    the lightest component and refits, keeping the model with the lowest
    message-length cost.  ``init`` (a prior mixture) replaces the data-driven
    start.  With ``return_info`` a dict of diagnostics is returned alongside
    the mixture.
    """
    cfg = EmConfig() if cfg is None else cfg
    q = np.asarray(q, dtype=float).ravel()
    if q.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(q)):
        raise ValueError("samples must be finite")
    if not sigma_v_sq >= 0:
        raise ValueError("noise variance must be nonnegative")
    sv = float(sigma_v_sq)
    rng = rng_for(seed)
    if cfg.max_fit_samples and q.size > cfg.max_fit_samples:
        q = q[np.sort(rng.choice(q.size, cfg.max_fit_samples, replace=False))]
    spread = np.var(q) / 10.0
    if cfg.approach == "NoisyFit":
        spread = max(spread, sv)
    if spread <= 0:
        spread = max(sv, 1e-12)
    if init is None:
        mu = initial_means(q, cfg, rng)
        alpha = np.full(mu.size, 1.0 / mu.size)
        var = np.full(mu.size, spread)
    else:
        alpha, mu = init.alpha.copy(), init.mu.copy()
        if cfg.approach == "NoisyFit":
            var = init.sigma_sq + sv
        else:
            # A zero clean variance is a fixed point of the latent update.
            var = np.maximum(init.sigma_sq, 1e-3 * spread)
    S = mu.size

    try:
        alpha, mu, var, costs, _ = _sweeps(q, alpha, mu, var, sv, cfg)
    except ValueError as exc:
        raise DegenerateFitError(str(exc)) from None
    best = (costs[-1], alpha, mu, var)
    path = [(alpha.size, costs[-1])]
    total_sweeps = costs.size - 1
    while cfg.annihilate and alpha.size > 1:
        drop = int(np.argmin(alpha))
        keep = np.arange(alpha.size) != drop
        a0 = alpha[keep] / alpha[keep].sum()
        try:
            alpha, mu, var, costs, _ = _sweeps(q, a0, mu[keep], var[keep], sv, cfg)
        except ValueError:
            break
        total_sweeps += costs.size - 1
        path.append((alpha.size, costs[-1]))
        if costs[-1] < best[0]:
            best = (costs[-1], alpha, mu, var)

    cost, alpha, mu, var = best
    if cfg.approach == "NoisyFit":
        var = np.maximum(var, sv) - sv
    gm = GaussianMixture(alpha, mu, np.maximum(var, 0.0), normalize=True)
    if return_info:
        return gm, {"cost": cost, "path": path, "sweeps": total_sweeps,
                    "n_fit": q.size, "n_initial": S}
    return gm


def moment_matched(q, sigma_v_sq):
    """Single-Gaussian prior whose channel output matches the sample moments."""
    q = np.asarray(q, dtype=float)
    return GaussianMixture([1.0], [np.mean(q)], [max(np.var(q), sigma_v_sq) - sigma_v_sq])


def denoise_iid(gm, sigma_v_sq, q):
    """Return ``(E[X|q], dE[X|q]/dq)`` under prior ``gm`` and AWGN."""
    q = np.asarray(q, dtype=float)
    if sigma_v_sq == 0:
        return q.copy(), np.ones_like(q)
    eta, deta = kernels.gm_denoise(q.ravel(), gm.alpha, gm.mu, gm.sigma_sq, float(sigma_v_sq))
    return eta.reshape(q.shape), deta.reshape(q.shape)


def eta_iid(gm, sigma_v_sq, q):
    return denoise_iid(gm, sigma_v_sq, q)[0]


def eta_iid_deriv(gm, sigma_v_sq, q):
    return denoise_iid(gm, sigma_v_sq, q)[1]
