"""Universal denoising by weighted context quantization plus per-cluster GM fits.

Two ways of handling small clusters are provided: UD1 borrows the symbols
whose contexts lie nearest a small cluster's centroid, and UD2 merges
clusters with similar fitted densities while an MDL cost keeps dropping.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gm import (DegenerateFitError, EmConfig, GaussianMixture, denoise_iid, fit_gm_noisy,
                 moment_matched)
from .sources import derive_seed, rng_for


@dataclass(frozen=True)
class ContextConfig:
    """Context and clustering settings; ``L_init=None`` picks 10 (UD1) or 30 (UD2)."""
    k: int = 6
    b1: float = 0.3
    b2: float = 0.5
    L_init: int = None
    T: int = 256
    kl_stop: float = 2.0
    variant: str = "UD1"
    kl_samples: int = 10_000
    kl_seed: int = 0x6B6C
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-4
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        if self.variant not in ("UD1", "UD2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.k < 1 or self.T < 1 or self.b1 <= 0:
            raise ValueError("need k >= 1, T >= 1 and b1 > 0")
        if self.L_init is not None and self.L_init < 1:
            raise ValueError("L_init must be positive")

    @property
    def n_clusters(self):
        if self.L_init is not None:
            return self.L_init
        return 10 if self.variant == "UD1" else 30


@dataclass
class ContextPartition:
    labels: np.ndarray
    centroids: np.ndarray
    weighted_contexts: np.ndarray

    @property
    def L(self):
        return self.centroids.shape[0]

    def members(self, l):
        return np.flatnonzero(self.labels == l)


def build_contexts(q, k):
    """Rows ``[q[j-k:j], q[j+1:j+k+1]]`` with the median of q beyond either end."""
    q = np.asarray(q, dtype=float)
    if q.size <= 2 * k:
        raise ValueError(f"sequence of length {q.size} too short for k={k}")
    pad = np.full(k, np.median(q))
    win = sliding_window_view(np.concatenate([pad, q, pad]), 2 * k + 1)
    return np.concatenate([win[:, :k], win[:, k + 1:]], axis=1)


def decay_rate(sigma_v_sq, q, b1=0.3, b2=0.5):
    """Context decay, linear in the estimated input SNR in dB/10, floored at 0."""
    q = np.asarray(q, dtype=float)
    snr = (np.mean(q ** 2) - sigma_v_sq) / sigma_v_sq if sigma_v_sq > 0 else np.inf
    snr = max(snr, 1e-3)
    return max(b1 * np.log10(snr) + b2, 0.0)


def context_weights(k, sigma_v_sq=None, q=None, b1=0.3, b2=0.5, beta=None):
    """Weights for positions 1..2k; the two neighbors of the center get 1."""
    if beta is None:
        beta = decay_rate(sigma_v_sq, q, b1, b2)
    ki = np.arange(1, 2 * k + 1)
    dist = np.where(ki <= k, k - ki, ki - k - 1)
    return np.exp(-beta * dist)


def _sq_dists(X, C):
    return (np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * X @ C.T
            + np.einsum("ij,ij->i", C, C)[None, :])


def kmeans(X, L, seed, max_iters=100, tol=1e-4):
    """Lloyd iterations from a seeded farthest-point start; empty clusters dropped.

    Returns ``(labels, centroids)`` with labels in ``0..L'-1``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    L = min(L, n)
    rng = rng_for(seed)
    idx = [int(rng.integers(n))]
    nearest = np.sum((X - X[idx[0]]) ** 2, axis=1)
    while len(idx) < L:
        j = int(np.argmax(nearest))
        if nearest[j] <= 0:
            break
        idx.append(j)
        nearest = np.minimum(nearest, np.sum((X - X[j]) ** 2, axis=1))
    C = X[idx].copy()
    prev = np.inf
    for _ in range(max_iters):
        d = _sq_dists(X, C)
        labels = np.argmin(d, axis=1)
        inertia = float(np.maximum(d[np.arange(n), labels], 0).sum())
        counts = np.bincount(labels, minlength=C.shape[0])
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]
        if prev - inertia <= tol * inertia:
            break
        prev = inertia
    labels = np.argmin(_sq_dists(X, C), axis=1)
    used = np.unique(labels)
    remap = np.full(C.shape[0], -1)
    remap[used] = np.arange(used.size)
    return remap[labels], C[used]


def cluster_contexts(weighted, L_init, seed, max_iters=100, tol=1e-4):
    labels, cents = kmeans(weighted, L_init, seed, max_iters, tol)
    return ContextPartition(labels, cents, weighted)


def partition(q, sigma_v_sq, cfg, seed):
    c = build_contexts(q, cfg.k)
    w = context_weights(cfg.k, sigma_v_sq, q, cfg.b1, cfg.b2)
    return cluster_contexts(c * w, cfg.n_clusters, derive_seed(seed, 0),
                            cfg.kmeans_iters, cfg.kmeans_tol)


def fit_or_fallback(q, sigma_v_sq, em_cfg, seed, init=None):
    """GM prior for ``q``; a moment-matched Gaussian if EM degenerates."""
    if q.size < 2:
        return moment_matched(q, sigma_v_sq), True
    try:
        return fit_gm_noisy(q, sigma_v_sq, em_cfg, seed, init=init), False
    except DegenerateFitError:
        return moment_matched(q, sigma_v_sq), True


def borrow_set(part, l, T):
    """Members of cluster ``l`` plus the nearest outside contexts up to ``T``."""
    own = part.members(l)
    need = T - own.size
    if need <= 0:
        return own
    others = np.flatnonzero(part.labels != l)
    d = np.sum((part.weighted_contexts[others] - part.centroids[l]) ** 2, axis=1)
    pick = others[np.argsort(d, kind="stable")[:need]]
    return np.sort(np.concatenate([own, pick]))


def denoise_ud1(q, sigma_v_sq, cfg=None, seed=0, info=None):
    """UD1 estimate and per-symbol derivative."""
    cfg = ContextConfig() if cfg is None else cfg
    q = np.asarray(q, dtype=float)
    part = partition(q, sigma_v_sq, cfg, seed)
    eta = np.empty_like(q)
    deta = np.empty_like(q)
    gms, fit_sizes, fallbacks = [], [], 0
    for l in range(part.L):
        own = part.members(l)
        fit_idx = borrow_set(part, l, cfg.T)
        gm, fell = fit_or_fallback(q[fit_idx], sigma_v_sq, cfg.em, derive_seed(seed, 1, l))
        fallbacks += fell
        eta[own], deta[own] = denoise_iid(gm, sigma_v_sq, q[own])
        gms.append(gm)
        fit_sizes.append(fit_idx.size)
    if info is not None:
        info.update(partition=part, gms=gms, fit_sizes=fit_sizes, fallbacks=fallbacks)
    return eta, deta


def _mc_draws(gm, n, seed):
    # Common random numbers: every mixture uses the same uniforms and normals,
    # so a distance depends only on the two mixtures involved.
    rng = rng_for(seed)
    u = rng.random(n)
    z = rng.standard_normal(n)
    comp = np.minimum(np.searchsorted(np.cumsum(gm.alpha), u, side="right"), gm.S - 1)
    return gm.mu[comp] + np.sqrt(gm.sigma_sq[comp]) * z


def kl_divergence_mc(p, r, n=10_000, seed=0x6B6C):
    """Monte-Carlo estimate of D(p||r) for channel-side (positive variance) mixtures."""
    x = _mc_draws(p, n, seed)
    val = float(np.mean(p.logpdf(x) - r.logpdf(x)))
    if not np.isfinite(val):
        raise FloatingPointError("non-finite KL estimate")
    return val


def kl_distance_gm(p, r, n=10_000, seed=0x6B6C):
    """Symmetrized divergence D(p||r) + D(r||p)."""
    return kl_divergence_mc(p, r, n, seed) + kl_divergence_mc(r, p, n, seed)


def kl_matrix(gms, n=10_000, seed=0x6B6C):
    L = len(gms)
    D = np.zeros((L, L))
    for s in range(L):
        for t in range(s + 1, L):
            D[s, t] = D[t, s] = kl_distance_gm(gms[s], gms[t], n, seed)
    return D


def mdl_cost(subsequences, noisy_gms, counts, L0):
    """Description length of a partition whose l-th part merges ``counts[l]`` initial clusters.

    ``noisy_gms`` are densities of the noisy symbols.  Natural logarithms
    throughout.  Returns ``(cost, clamped)`` where ``clamped`` reports whether
    any density had to be floored at 1e-300.
    """
    if sum(counts) != L0:
        raise ValueError("merge counts must add up to L0")
    nll, clamped = 0.0, False
    pen = 0.0
    for qs, g in zip(subsequences, noisy_gms):
        lp = g.logpdf(np.asarray(qs, dtype=float))
        if np.any(lp < np.log(1e-300)):
            clamped = True
            lp = np.maximum(lp, np.log(1e-300))
        nll -= float(np.sum(lp))
        pen += 1.5 * g.S * np.log(len(qs))
    counts = np.asarray(counts, dtype=float)
    mapping = float(np.sum(counts * np.log(L0 / counts)))
    return nll + pen + 2.0 * len(noisy_gms) + mapping, clamped


def union_prior(a, na, b, nb):
    """Both mixtures side by side, weighted by group size: the start for a merged refit."""
    w = np.concatenate([a.alpha * na, b.alpha * nb])
    return GaussianMixture(w / w.sum(), np.concatenate([a.mu, b.mu]),
                           np.concatenate([a.sigma_sq, b.sigma_sq]))


def denoise_ud2(q, sigma_v_sq, cfg=None, seed=0, info=None):
    """UD2 estimate and per-symbol derivative."""
    cfg = ContextConfig(variant="UD2") if cfg is None else cfg
    q = np.asarray(q, dtype=float)
    part = partition(q, sigma_v_sq, cfg, seed)
    L0 = part.L
    groups = [part.members(l) for l in range(L0)]
    counts = [1] * L0
    priors, fallbacks = [], 0
    for l, idx in enumerate(groups):
        gm, fell = fit_or_fallback(q[idx], sigma_v_sq, cfg.em, derive_seed(seed, 1, l))
        priors.append(gm)
        fallbacks += fell
    noisy = [g.convolve(sigma_v_sq) for g in priors]
    cost, _ = mdl_cost([q[i] for i in groups], noisy, counts, L0)
    trajectory = [cost]
    D = kl_matrix(noisy, cfg.kl_samples, cfg.kl_seed)
    # A merge changes the cost only through the two groups involved, and each
    # refit depends only on the two groups and their priors, so a rejected
    # pair stays rejected and need not be refitted after other merges.
    rejected = set()
    n_merge = 0
    while len(groups) > 1:
        iu = np.triu_indices(len(groups), 1)
        order = np.argsort(D[iu], kind="stable")
        accepted = False
        for o in order:
            s, t = int(iu[0][o]), int(iu[1][o])
            if D[s, t] > cfg.kl_stop:
                break
            pair = tuple(sorted((int(groups[s][0]), int(groups[t][0]))))
            if pair in rejected:
                continue
            merged = np.sort(np.concatenate([groups[s], groups[t]]))
            n_merge += 1
            gm, fell = fit_or_fallback(q[merged], sigma_v_sq, cfg.em,
                                       derive_seed(seed, 2, merged[0], merged.size),
                                       union_prior(priors[s], groups[s].size,
                                                   priors[t], groups[t].size))
            keep = [i for i in range(len(groups)) if i not in (s, t)]
            cand_groups = [groups[i] for i in keep] + [merged]
            cand_noisy = [noisy[i] for i in keep] + [gm.convolve(sigma_v_sq)]
            cand_counts = [counts[i] for i in keep] + [counts[s] + counts[t]]
            c_new, _ = mdl_cost([q[i] for i in cand_groups], cand_noisy, cand_counts, L0)
            if c_new < cost:
                fallbacks += fell
                priors = [priors[i] for i in keep] + [gm]
                groups, noisy, counts, cost = cand_groups, cand_noisy, cand_counts, c_new
                trajectory.append(cost)
                # Unchanged pairs keep their entries; only the new row is computed.
                Dn = np.zeros((len(groups), len(groups)))
                Dn[:-1, :-1] = D[np.ix_(keep, keep)]
                for i in range(len(groups) - 1):
                    Dn[i, -1] = Dn[-1, i] = kl_distance_gm(noisy[i], noisy[-1],
                                                           cfg.kl_samples, cfg.kl_seed)
                D = Dn
                accepted = True
                break
            rejected.add(pair)
        if not accepted:
            break
    eta = np.empty_like(q)
    deta = np.empty_like(q)
    for idx, gm in zip(groups, priors):
        eta[idx], deta[idx] = denoise_iid(gm, sigma_v_sq, q[idx])
    if info is not None:
        info.update(partition=part, groups=groups, gms=priors, counts=counts,
                    mdl=trajectory, kl=D, fallbacks=fallbacks, refits=n_merge)
    return eta, deta


class UniversalDenoiser:
    """Callable ``(q, sigma_v_sq) -> (eta, deta)`` for use inside AMP.

    Each call draws its seed from ``(seed, call index)`` so a run is
    reproducible while successive iterations use fresh streams.
    """

    def __init__(self, cfg=None, seed=0, keep_info=False):
        self.cfg = ContextConfig() if cfg is None else cfg
        self.seed = int(seed)
        self.calls = 0
        self.keep_info = keep_info
        self.last_info = None

    def __call__(self, q, sigma_v_sq):
        fn = denoise_ud1 if self.cfg.variant == "UD1" else denoise_ud2
        info = {} if self.keep_info else None
        out = fn(q, sigma_v_sq, self.cfg, derive_seed(self.seed, self.calls), info)
        self.calls += 1
        self.last_info = info
        return out
