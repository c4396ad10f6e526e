import numpy as np
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from ampud import kernels
from ampud.experiment import ExperimentConfig, parse_config
from ampud.gm import GaussianMixture, HALF_NPARS, denoise_iid
from ampud.sources import MeasurementSystem, measure, rng_for, sdr_db
from ampud.stdct import ShortTimeDct
from ampud.universal import build_contexts, context_weights, kl_matrix, kmeans, mdl_cost
from ampud.window import eta_m4, eta_mgauss
from ampud.sources import m4, mgauss

settings.register_profile("ampud", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ampud")

floats = st.floats(-5, 5, allow_nan=False)


@st.composite
def mixtures(draw, max_s=4, delta=True):
    S = draw(st.integers(1, max_s))
    w = np.array(draw(st.lists(st.floats(0.05, 1), min_size=S, max_size=S)))
    mu = draw(st.lists(floats, min_size=S, max_size=S))
    lo = 0.0 if delta else 0.01
    var = draw(st.lists(st.one_of(st.just(lo), st.floats(lo, 3)), min_size=S, max_size=S))
    return GaussianMixture(w / w.sum(), mu, var, normalize=True)


@given(mixtures(), st.floats(0.01, 2), st.lists(floats, min_size=1, max_size=20))
def test_posterior_mean_in_component_hull(gm, sv, qs):
    q = np.array(qs)
    eta, _ = denoise_iid(gm, sv, q)
    tau = gm.sigma_sq + sv
    wiener = gm.mu[:, None] + (gm.sigma_sq / tau)[:, None] * (q[None, :] - gm.mu[:, None])
    assert np.all(eta >= wiener.min(axis=0) - 1e-9)
    assert np.all(eta <= wiener.max(axis=0) + 1e-9)


@given(mixtures(), st.floats(0.0, 2))
def test_convolve_adds_variance(gm, sv):
    assert np.isclose(gm.convolve(sv).second_moment(), gm.second_moment() + sv)
    assert np.isclose(gm.convolve(sv).mean(), gm.mean())


@given(mixtures(delta=False), st.lists(floats, min_size=1, max_size=10))
def test_logpdf_matches_pdf(gm, xs):
    x = np.array(xs)
    np.testing.assert_allclose(np.exp(gm.logpdf(x)), gm.pdf(x), rtol=1e-10, atol=1e-300)


@given(st.integers(0, 2 ** 32 - 1), st.integers(20, 300), st.booleans())
def test_em_weights_normalized(seed, n, latent):
    rng = rng_for(seed)
    q = rng.normal(0, 1, n) + np.where(rng.random(n) < 0.3, 3.0, 0.0)
    mu = rng.choice(q, 3, replace=False)
    try:
        a, m, v, costs, _ = kernels.em_sweeps(q, np.full(3, 1 / 3), mu, np.full(3, 0.5), 0.1,
                                              latent, 0.2, 0.9, HALF_NPARS, 1e-5, 50)
    except ValueError:
        return
    assert abs(a.sum() - 1) < 1e-10 and np.all(a > 0)
    assert np.all(np.isfinite(costs))
    if not latent:
        assert np.all(v >= 0.09 * (1 - 1e-12))


@given(st.integers(1, 8), st.floats(0, 5))
def test_context_weights_symmetric(k, beta):
    w = context_weights(k, beta=beta)
    assert w.size == 2 * k and np.all(w <= 1) and np.all(w > 0)
    assert np.array_equal(w, w[::-1])


@given(st.lists(floats, min_size=5, max_size=60), st.integers(1, 2))
def test_contexts_shape(qs, k):
    q = np.array(qs)
    assume(q.size > 2 * k)
    c = build_contexts(q, k)
    assert c.shape == (q.size, 2 * k)
    assert np.array_equal(c[k:-k, k - 1], q[k - 1:q.size - k - 1])


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 12), st.integers(2, 80))
def test_kmeans_contract(seed, L, n):
    X = rng_for(seed).normal(0, 1, (n, 3)).round(1)
    labels, cents = kmeans(X, L, seed)
    assert labels.shape == (n,) and cents.shape[0] <= min(L, n)
    assert set(np.unique(labels)) == set(range(cents.shape[0]))


@given(st.lists(mixtures(max_s=2, delta=False), min_size=1, max_size=4))
def test_kl_matrix_shape(gms):
    D = kl_matrix(gms, n=2000)
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0) and np.all(D >= -0.05)


@given(st.permutations(range(3)))
def test_mdl_order_free(perm):
    rng = rng_for(3)
    qs = [rng.normal(i, 1, 50 + 10 * i) for i in range(3)]
    gms = [GaussianMixture([1.0], [i], [1.0]) for i in range(3)]
    counts = [1, 2, 3]
    base = mdl_cost(qs, gms, counts, 6)[0]
    p = list(perm)
    assert np.isclose(mdl_cost([qs[i] for i in p], [gms[i] for i in p], [counts[i] for i in p],
                               6)[0], base, rtol=1e-12)


@given(st.integers(1, 200))
def test_stdct_round_trip(n):
    x = rng_for(n).standard_normal(n)
    tf = ShortTimeDct(n)
    th = tf.forward(x)
    assert th.size == tf.size and tf.size % 32 == 0
    np.testing.assert_allclose(tf.inverse(th)[:n], x, atol=1e-12)
    assert np.allclose(np.linalg.norm(th), np.linalg.norm(x))


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
def test_measure_linear(M, N, seed):
    sys = MeasurementSystem(M, N, 0.0, seed)
    rng = rng_for(seed, 1)
    a, b = rng.standard_normal(N), rng.standard_normal(N)
    op = sys.operator()
    np.testing.assert_allclose(measure(a + b, sys, 0, op), measure(a, sys, 0, op)
                               + measure(b, sys, 0, op), atol=1e-12)


@given(st.floats(0.1, 100), st.integers(0, 1000))
def test_sdr_scale_invariant(c, seed):
    rng = rng_for(seed)
    x, e = rng.standard_normal(50), rng.standard_normal(50)
    assert np.isclose(sdr_db(c * x, c * (x + e)), sdr_db(x, x + e))


@given(st.lists(floats, min_size=5, max_size=5), st.floats(0.05, 2))
def test_window_denoisers_odd(win, sv):
    w = np.array(win)
    assert np.isclose(eta_m4(m4(), -w, sv), -eta_m4(m4(), w, sv), atol=1e-12)
    assert np.isclose(eta_mgauss(mgauss(), -w, sv), -eta_mgauss(mgauss(), w, sv), atol=1e-12)


@given(st.integers(1, 5), st.integers(0, 3), st.sampled_from(["UD1", "UD2", "iid"]),
       st.lists(st.floats(0.05, 2), min_size=1, max_size=3))
def test_config_dump_round_trip(trials, seed, variant, rates):
    cfg = ExperimentConfig(trials=trials, seed=seed, variant=variant, rates=tuple(rates))
    assert parse_config(cfg.dump()) == cfg
