import numpy as np
import pytest

from ampud.amp import (AmpDivergenceError, DampingPolicy, amp_step, initial_state, run_amp,
                       write_trace)
from ampud.gm import GaussianMixture, denoise_iid
from ampud.se import laplace_posterior, mmse_sparse_laplace, se_recursion
from ampud.sources import (IidSourceSpec, MeasurementSystem, generate_signal, measure,
                           noise_for_snr, rng_for, sparse_laplace)


def identity(q, sv):
    return q.copy(), np.ones_like(q)


def laplace_denoiser(q, sv, h=1e-6):
    _, m = laplace_posterior(q, sv, 0.03)
    _, up = laplace_posterior(q + h, sv, 0.03)
    _, dn = laplace_posterior(q - h, sv, 0.03)
    return m, (up - dn) / (2 * h)


def laplace_setup(N=10000, R=0.4, snr=10.0, seed=0):
    x = generate_signal(sparse_laplace(), N, seed)
    sz = noise_for_snr(0.03, R, snr)
    sys = MeasurementSystem(int(R * N), N, sz, seed + 1)
    op = sys.operator()
    return x, op, measure(x, sys, seed + 2, op), sz


def test_onsager_identity():
    x, op, y, _ = laplace_setup(N=500)
    st = initial_state(y, op.N)
    assert np.array_equal(st.r, y) and np.all(st.x == 0)
    nxt, avg = amp_step(st, op, y, identity)
    assert avg == 1.0
    np.testing.assert_allclose(nxt.r, y - op.matvec(op.rmatvec(y)) + y / 0.4, rtol=1e-12)


def test_initial_sigma():
    _, op, y, _ = laplace_setup()
    assert initial_state(y, op.N).sigma_hat_sq == pytest.approx(0.0825, rel=0.05)


def test_noiseless_square():
    prior = GaussianMixture([0.9, 0.1], [0.0, 0.0], [0.0, 1.0])
    N = 1000
    x = generate_signal(IidSourceSpec("ExplicitGM", gm=prior), N, 3)
    sys = MeasurementSystem(N, N, 0.0, 4)
    op = sys.operator()
    y = measure(x, sys, 5, op)
    res = run_amp(y, op, lambda q, sv: denoise_iid(prior, sv, q), DampingPolicy(), 30, x)
    assert res.trace[-1]["sdr_db"] > 40


def test_trace_settles():
    x, op, y, _ = laplace_setup(seed=3)
    res = run_amp(y, op, laplace_denoiser, DampingPolicy(), 25, x)
    sig = res.column("sigma_hat_sq")
    assert np.all(np.isfinite(sig))
    tail = sig[10:]
    assert np.all(tail[1:] <= tail[:-1] * 1.1)


def _tracking_error(onsager, seeds=(4, 5, 6)):
    """Largest per-iteration gap in dB between trial-averaged MSE and the SE prediction."""
    emp = []
    for seed in seeds:
        x, op, y, sz = laplace_setup(seed=seed)
        res = run_amp(y, op, laplace_denoiser, DampingPolicy(), 12, x, onsager=onsager)
        emp.append(res.column("mse")[1:])
    sig = se_recursion(mmse_sparse_laplace, 0.4, sz, sz + 0.03 / 0.4, 12)
    pred = np.array([mmse_sparse_laplace(s) for s in sig[:-1]])
    return np.max(np.abs(10 * np.log10(np.mean(emp, axis=0) / pred)))


def test_onsager_needed():
    assert _tracking_error(True) < _tracking_error(False)


def test_decoupling():
    x, op, y, _ = laplace_setup(seed=5)
    st = initial_state(y, op.N)
    for _ in range(6):
        st, _ = amp_step(st, op, y, laplace_denoiser)
    q = op.rmatvec(st.r) + st.x
    assert np.var(q - x) == pytest.approx(st.sigma_hat_sq, rel=0.15)


def test_determinism():
    x, op, y, _ = laplace_setup(N=2000, seed=6)
    a = run_amp(y, op, laplace_denoiser, DampingPolicy("Adaptive"), 8, x)
    b = run_amp(y, op, laplace_denoiser, DampingPolicy("Adaptive"), 8, x)
    assert np.array_equal(a.x, b.x)
    for name in ("sigma_hat_sq", "lambda", "mse"):
        assert np.array_equal(a.column(name), b.column(name), equal_nan=True)


def test_adaptive_policy():
    p = DampingPolicy("Adaptive")
    assert p.initial() == 0.5
    assert p.update(0.5, 1.0, 0.9) == 0.5
    assert p.update(0.2, 1.0, 0.9) == pytest.approx(0.22)
    assert p.update(0.015, 1.0, 1.1) == 0.01
    assert DampingPolicy("Fixed", lam=0.1).update(0.1, 1.0, 2.0) == 0.1
    with pytest.raises(ValueError):
        DampingPolicy("Fixed", lam=0.0)
    with pytest.raises(ValueError):
        DampingPolicy("Other")


def test_divergence_reported(tmp_path):
    _, op, y, _ = laplace_setup(N=500)

    def bad(q, sv):
        return np.full_like(q, np.inf), np.ones_like(q)

    with pytest.raises(AmpDivergenceError) as exc:
        run_amp(y, op, bad, None, 5)
    assert exc.value.t == 1 and len(exc.value.trace) == 1
    res = run_amp(y, op, identity, DampingPolicy("Fixed", lam=0.5), 2)
    write_trace(tmp_path / "t.csv", res.trace)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,sigma_hat_sq,sdr_db,lambda"
