import numpy as np
import pytest
from scipy import integrate

from ampud import kernels
from ampud.gm import (DegenerateFitError, EmConfig, GaussianMixture, HALF_NPARS, denoise_iid,
                      eta_iid, eta_iid_deriv, fit_gm_noisy, gm_pdf, initial_means,
                      moment_matched)
from ampud.sources import rng_for
from oracles import clean_cem_sweep, mmse_quadrature

N01 = GaussianMixture([1.0], [0.0], [1.0])


def test_pdf_examples():
    assert gm_pdf(N01, 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-12)
    sym = GaussianMixture([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert gm_pdf(sym, 0.0) == pytest.approx(0.24197072451914337, rel=1e-12)
    total = integrate.quad(lambda x: gm_pdf(N01, x), -np.inf, np.inf)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.4], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [0.0], [-1.0])
    with pytest.raises(ValueError):
        GaussianMixture([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    spike = GaussianMixture([0.5, 0.5], [0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        spike.pdf(0.0)
    assert np.isfinite(spike.convolve(0.1).logpdf(np.array([0.0]))).all()


def test_text_round_trip():
    g = GaussianMixture([0.2, 0.8], [-1.5, 0.25], [0.0, 2.0])
    assert GaussianMixture.from_text(g.to_text()) == g


def test_fit_single_gaussian():
    q = rng_for(1).normal(0.0, np.sqrt(1.1), 100_000)
    gm = fit_gm_noisy(q, 0.1, seed=3)
    assert gm.S == 1
    assert abs(gm.mu[0]) < 0.02
    assert abs(gm.sigma_sq[0] - 1.0) < 0.05


def test_fit_sparse_binary():
    rng = rng_for(2)
    x = (rng.random(100_000) < 0.05).astype(float)
    q = x + 0.1 * rng.standard_normal(x.size)
    gm = fit_gm_noisy(q, 0.01, seed=4)
    assert gm.S >= 2
    heavy = np.argsort(gm.alpha)[-2:]
    assert sorted(np.round(gm.mu[heavy])) == [0.0, 1.0]
    for target in (0.0, 1.0):
        assert np.min(np.abs(gm.mu[heavy] - target)) < 0.05


def test_latent_em_zero_noise_is_clean_em():
    rng = rng_for(5)
    q = np.concatenate([rng.normal(-2, 0.5, 600), rng.normal(1, 1.0, 400)])
    alpha, mu, var = np.full(3, 1 / 3), np.array([-1.0, 0.0, 1.0]), np.full(3, 1.0)
    for _ in range(5):
        a, m, v, _, _ = kernels.em_sweeps(q, alpha, mu, var, 0.0, True, 0.2, 0.9, HALF_NPARS,
                                          0.0, 1)
        alpha, mu, var = clean_cem_sweep(q, alpha, mu, var, HALF_NPARS)
        assert a.size == alpha.size
        np.testing.assert_allclose(a, alpha, atol=1e-10)
        np.testing.assert_allclose(m, mu, atol=1e-10)
        np.testing.assert_allclose(v, var, atol=1e-10)


@pytest.mark.parametrize("latent", [False, True])
def test_sweep_invariants(latent):
    rng = rng_for(6)
    sv = 0.05
    x = np.where(rng.random(5000) < 0.1, rng.laplace(0, 1, 5000), 0.0)
    q = x + np.sqrt(sv) * rng.standard_normal(5000)
    cfg = EmConfig()
    mu = initial_means(q, cfg, rng_for(7))
    alpha = np.full(mu.size, 1 / mu.size)
    var = np.full(mu.size, max(np.var(q) / 10, sv) if not latent else np.var(q) / 10)
    prev = np.inf
    for _ in range(40):
        alpha, mu, var, costs, _ = kernels.em_sweeps(q, alpha, mu, var, sv, latent, 0.2, 0.9,
                                                     HALF_NPARS, 0.0, 1)
        assert abs(alpha.sum() - 1.0) < 1e-10
        if latent:
            assert costs[-1] <= prev + 1e-8
            prev = costs[-1]
        else:
            assert np.all(var >= 0.9 * sv * (1 - 1e-12))
    gm = fit_gm_noisy(q, sv, EmConfig(approach="LatentEM" if latent else "NoisyFit"), seed=1)
    assert np.all(gm.sigma_sq >= 0)


def test_all_components_killed():
    q = np.zeros(10)
    with pytest.raises(DegenerateFitError):
        fit_gm_noisy(q, 1.0)
    with pytest.raises(ValueError):
        fit_gm_noisy(np.array([1.0]), 0.1)


def test_fit_deterministic_and_subsampled():
    q = rng_for(8).standard_normal(3000)
    cfg = EmConfig(max_fit_samples=1000)
    a, info = fit_gm_noisy(q, 0.1, cfg, seed=2, return_info=True)
    assert info["n_fit"] == 1000
    assert a == fit_gm_noisy(q, 0.1, cfg, seed=2)


def test_eta_examples():
    assert eta_iid(N01, 1.0, 2.0) == pytest.approx(1.0)
    sym = GaussianMixture([0.5, 0.5], [-1.0, 1.0], [0.2, 0.2])
    assert eta_iid(sym, 0.3, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert np.all(eta_iid_deriv(GaussianMixture([1.0], [0.3], [0.7]), 0.7,
                                np.linspace(-5, 5, 11)) == pytest.approx(0.5))
    h = 1e-5
    fd = (eta_iid(sym, 0.3, h) - eta_iid(sym, 0.3, -h)) / (2 * h)
    d = eta_iid_deriv(sym, 0.3, 0.0)
    assert d > 0 and d == pytest.approx(fd, rel=1e-5)


def test_eta_identity_at_zero_noise():
    q = np.linspace(-1, 1, 5)
    eta, deta = denoise_iid(N01, 0.0, q)
    assert np.array_equal(eta, q) and np.all(deta == 1)


def test_eta_mse_matches_quadrature():
    prior = GaussianMixture([0.5, 0.3, 0.2], [-1.0, 0.5, 2.0], [0.2, 0.1, 0.5])
    sv = 0.3
    rng = rng_for(9)
    x = prior.sample(1_000_000, rng)
    q = x + np.sqrt(sv) * rng.standard_normal(x.size)
    mse = np.mean((eta_iid(prior, sv, q) - x) ** 2)
    assert mse == pytest.approx(mmse_quadrature(prior.alpha, prior.mu, prior.sigma_sq, sv),
                                rel=0.005)


def test_monotone_single_component():
    q = np.linspace(-10, 10, 201)
    eta = eta_iid(GaussianMixture([1.0], [1.0], [2.0]), 0.5, q)
    assert np.all(np.diff(eta) > 0)


def test_moment_matched_floor():
    q = np.array([0.0, 0.1, -0.1])
    assert moment_matched(q, 1.0).sigma_sq[0] == 0.0
