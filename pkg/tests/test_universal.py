import numpy as np
import pytest

from ampud.gm import GaussianMixture, denoise_iid, fit_gm_noisy
from ampud.sources import derive_seed, generate_signal, rng_for, sparse_laplace
from ampud.universal import (ContextConfig, ContextPartition, UniversalDenoiser, borrow_set,
                             build_contexts, context_weights, decay_rate, denoise_ud1,
                             denoise_ud2, kl_distance_gm, kl_matrix, kmeans, mdl_cost,
                             partition)
from oracles import gauss_kl


def test_contexts_examples():
    c = build_contexts(np.array([1.0, 2, 3, 4, 5]), 1)
    assert c[2].tolist() == [2, 4]
    assert c[0].tolist() == [3, 2]
    assert c[4].tolist() == [4, 3]
    const = build_contexts(np.full(20, 0.7), 3)
    assert np.all(const == 0.7)


def test_weights():
    assert np.all(context_weights(4, beta=0.0) == 1)
    w = context_weights(6, beta=np.log(2))
    # ki counts from 1, so offsets k and k+1 are indices k-1 and k.
    assert w[5] == w[6] == 1
    assert w[4] == pytest.approx(0.5) and w[7] == pytest.approx(0.5)
    for i in range(6):
        assert w[5 - i] == w[6 + i]


def test_decay_rate_floor():
    q = rng_for(1).standard_normal(100)
    assert decay_rate(1e6, q) == 0.0
    assert decay_rate(0.1, q, b1=0.3, b2=0.5) > 0


def test_kmeans_two_clouds():
    rng = rng_for(2)
    truth = rng.random(400) < 0.5
    X = np.where(truth[:, None], 10.0, -10.0) + rng.standard_normal((400, 3))
    labels, cents = kmeans(X, 2, 0)
    assert cents.shape == (2, 3)
    assert np.all(labels == labels[0] * np.ones(400, int) ^ (truth != truth[0]))


def test_kmeans_constant():
    labels, cents = kmeans(np.ones((50, 4)), 10, 0)
    assert cents.shape[0] == 1 and np.all(labels == 0)


def test_partition_covers():
    q = generate_signal(sparse_laplace(), 3000, 1) + 0.2 * rng_for(3).standard_normal(3000)
    part = partition(q, 0.04, ContextConfig(), 0)
    assert part.labels.shape == (3000,)
    assert part.labels.min() == 0 and part.labels.max() == part.L - 1
    assert sum(part.members(l).size for l in range(part.L)) == 3000


def test_single_cluster_is_gm_core():
    rng = rng_for(4)
    q = rng.standard_normal(2000) * 1.2
    cfg = ContextConfig(L_init=1)
    eta, deta = denoise_ud1(q, 0.3, cfg, seed=5)
    gm = fit_gm_noisy(q, 0.3, cfg.em, derive_seed(5, 1, 0))
    e2, d2 = denoise_iid(gm, 0.3, q)
    assert np.array_equal(eta, e2) and np.array_equal(deta, d2)


def _toy_partition(sizes):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    rng = rng_for(6)
    cents = np.arange(len(sizes), dtype=float)[:, None] * np.ones((1, 2))
    ctx = cents[labels] + 0.1 * rng.standard_normal((labels.size, 2))
    return ContextPartition(labels, cents, ctx)


def test_borrow_thresholds():
    part = _toy_partition([300, 100, 600])
    assert borrow_set(part, 0, 256).size == 300
    fit = borrow_set(part, 1, 256)
    assert fit.size == 256
    assert np.all(np.isin(part.members(1), fit))


def test_ud1_uses_own_gm_only():
    q = generate_signal(sparse_laplace(0.1), 3000, 2) + 0.3 * rng_for(7).standard_normal(3000)
    info = {}
    eta, _ = denoise_ud1(q, 0.09, ContextConfig(), 3, info)
    part = info["partition"]
    for l, gm in enumerate(info["gms"]):
        own = part.members(l)
        assert np.array_equal(eta[own], denoise_iid(gm, 0.09, q[own])[0])
        assert info["fit_sizes"][l] >= min(256, q.size)


def test_kl_examples():
    p = GaussianMixture([0.3, 0.7], [-1.0, 2.0], [0.5, 1.0])
    assert abs(kl_distance_gm(p, p)) < 0.01
    a = GaussianMixture([1.0], [0.0], [1.0])
    b = GaussianMixture([1.0], [1.0], [1.0])
    from ampud.universal import kl_divergence_mc
    assert kl_divergence_mc(a, b) == pytest.approx(gauss_kl(0, 1, 1, 1), abs=0.02)
    D = kl_matrix([a, b, p])
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0) and np.all(D >= -0.02)


def test_mdl_terms():
    rng = rng_for(8)
    qs = [rng.standard_normal(500), rng.standard_normal(300)]
    g = GaussianMixture([1.0], [0.0], [1.0])
    split = GaussianMixture([0.5, 0.5], [0.0, 0.0], [1.0, 1.0])
    base, _ = mdl_cost(qs, [g, g], [1, 1], 2)
    more, _ = mdl_cost(qs, [g, split], [1, 1], 2)
    assert more - base == pytest.approx(1.5 * np.log(300), rel=1e-9)
    one, _ = mdl_cost([np.concatenate(qs)], [g], [2], 2)
    nll = -np.sum(g.logpdf(np.concatenate(qs)))
    assert one == pytest.approx(nll + 1.5 * np.log(800) + 2.0, rel=1e-12)
    single, _ = mdl_cost(qs[:1], [g], [1], 1)
    assert single == pytest.approx(-np.sum(g.logpdf(qs[0])) + 1.5 * np.log(500) + 2.0)
    with pytest.raises(ValueError):
        mdl_cost(qs, [g, g], [1, 2], 2)


def test_ud2_merges_same_distribution():
    q = rng_for(9).normal(0, np.sqrt(1.5), 4000)
    info = {}
    denoise_ud2(q, 0.5, ContextConfig(variant="UD2", L_init=2, k=1), 1, info)
    assert len(info["groups"]) == 1
    assert np.all(np.diff(info["mdl"]) < 0)


def test_ud2_keeps_separated():
    rng = rng_for(10)
    q = np.concatenate([rng.normal(-5, 1, 2000), rng.normal(5, 1, 2000)])
    info = {}
    denoise_ud2(q, 1.0, ContextConfig(variant="UD2", L_init=2, k=1), 1, info)
    assert len(info["groups"]) == 2
    assert info["kl"][0, 1] > 50


def test_denoiser_determinism():
    q = generate_signal(sparse_laplace(0.1), 2000, 3) + 0.3 * rng_for(11).standard_normal(2000)
    for v in ("UD1", "UD2"):
        a = UniversalDenoiser(ContextConfig(variant=v), 4)(q, 0.09)
        b = UniversalDenoiser(ContextConfig(variant=v), 4)(q, 0.09)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_config_errors():
    with pytest.raises(ValueError):
        ContextConfig(variant="UD3")
    with pytest.raises(ValueError):
        ContextConfig(L_init=0)
    with pytest.raises(ValueError):
        build_contexts(np.ones(4), 2)


@pytest.mark.slow
def test_iid_input_not_hurt():
    sv = 0.05
    x = generate_signal(sparse_laplace(), 100_000, 12)
    q = x + np.sqrt(sv) * rng_for(13).standard_normal(x.size)
    ref = np.mean((denoise_iid(fit_gm_noisy(q, sv, seed=1), sv, q)[0] - x) ** 2)
    for v in ("UD1", "UD2"):
        eta, _ = UniversalDenoiser(ContextConfig(variant=v), 2)(q, sv)
        assert np.mean((eta - x) ** 2) <= 1.05 * ref
