"""Approximate message passing with pluggable denoisers and damping."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .sources import sdr_db
from .universal import ContextConfig, UniversalDenoiser


class AmpDivergenceError(RuntimeError):
    """Non-finite iterate; ``t`` is the failing iteration, ``trace`` the rows so far."""

    def __init__(self, t, trace):
        super().__init__(f"AMP diverged at iteration {t}")
        self.t = t
        self.trace = trace


@dataclass
class AmpState:
    x: np.ndarray
    r: np.ndarray
    sigma_hat_sq: float
    t: int = 0


@dataclass(frozen=True)
class DampingPolicy:
    """Fixed weight ``lam``, or an adaptive weight kept inside ``[lam_min, lam_max]``."""
    mode: str = "Fixed"
    lam: float = 1.0
    lam_min: float = 0.01
    lam_max: float = 0.5
    lam_init: float = 0.5
    up: float = 1.1
    down: float = 0.5

    def __post_init__(self):
        if self.mode not in ("Fixed", "Adaptive"):
            raise ValueError(f"unknown damping mode {self.mode!r}")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if not 0 < self.lam_min <= self.lam_init <= self.lam_max <= 1:
            raise ValueError("need 0 < lam_min <= lam_init <= lam_max <= 1")

    def initial(self):
        return self.lam if self.mode == "Fixed" else self.lam_init

    def update(self, lam, old_sigma, new_sigma):
        if self.mode == "Fixed":
            return lam
        if new_sigma < old_sigma:
            return min(lam * self.up, self.lam_max)
        return max(lam * self.down, self.lam_min)


def initial_state(y, N):
    y = np.asarray(y, dtype=float)
    return AmpState(np.zeros(N), y.copy(), float(np.dot(y, y)) / y.size, 0)


def amp_step(state, op, y, denoiser, lam=1.0, onsager=True):
    """One damped AMP iteration; returns the next state and ``<eta'>``."""
    M, N = op.M, op.N
    q = op.rmatvec(state.r) + state.x
    eta, deta = denoiser(q, state.sigma_hat_sq)
    x = lam * eta + (1.0 - lam) * state.x
    avg = float(np.mean(deta))
    if not (np.all(np.isfinite(x)) and np.isfinite(avg)):
        raise FloatingPointError("non-finite iterate")
    r = y - op.matvec(x)
    if onsager:
        r = r + (N / M) * avg * state.r
    sig = float(np.dot(r, r)) / M
    if not np.isfinite(sig):
        raise FloatingPointError("non-finite residual")
    return AmpState(x, r, sig, state.t + 1), avg


@dataclass
class AmpResult:
    x: np.ndarray
    trace: list = field(default_factory=list)

    def column(self, name):
        return np.array([row[name] for row in self.trace])


def run_amp(y, op, denoiser, policy=None, t_max=30, x_true=None, onsager=True):
    """Run ``t_max`` iterations from x=0.

    Trace row ``t`` describes the estimate after ``t`` iterations: the noise
    estimate from its residual, the damping weight that produced it, and
    MSE/SDR when ``x_true`` is supplied.
    """
    policy = DampingPolicy() if policy is None else policy
    y = np.asarray(y, dtype=float)
    state = initial_state(y, op.N)
    lam = policy.initial()
    trace = []

    def record(st, lam_used):
        row = {"t": st.t, "sigma_hat_sq": st.sigma_hat_sq, "lambda": lam_used}
        if x_true is not None:
            row["mse"] = float(np.mean((st.x - x_true) ** 2))
            row["sdr_db"] = sdr_db(x_true, st.x)
        trace.append(row)

    record(state, float("nan"))
    for _ in range(t_max):
        try:
            nxt, _ = amp_step(state, op, y, denoiser, lam, onsager)
        except FloatingPointError:
            raise AmpDivergenceError(state.t + 1, trace) from None
        record(nxt, lam)
        lam = policy.update(lam, state.sigma_hat_sq, nxt.sigma_hat_sq)
        state = nxt
    return AmpResult(state.x, trace)


def default_policy(variant):
    if variant == "UD1":
        return DampingPolicy("Fixed", lam=0.1), 100
    return DampingPolicy("Adaptive"), 30


def run_amp_ud(y, op, ud_cfg=None, policy=None, t_max=None, seed=0, x_true=None):
    """AMP with the universal denoiser; damping and length default per variant."""
    ud_cfg = ContextConfig() if ud_cfg is None else ud_cfg
    pol, steps = default_policy(ud_cfg.variant)
    policy = pol if policy is None else policy
    t_max = steps if t_max is None else t_max
    return run_amp(y, op, UniversalDenoiser(ud_cfg, seed), policy, t_max, x_true)


TRACE_FIELDS = ("t", "sigma_hat_sq", "sdr_db", "lambda")


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for row in trace:
            w.writerow([row["t"], f"{row['sigma_hat_sq']:.10g}",
                        f"{row['sdr_db']:.4f}" if "sdr_db" in row else "",
                        f"{row['lambda']:.6g}"])
