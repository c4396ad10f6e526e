"""Test signals, the Gaussian measurement operator, and SNR/SDR metrics."""
from dataclasses import dataclass, field

import numpy as np


def rng_for(seed, *path):
    """Independent Philox stream for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *path):
    """64-bit child seed of ``seed`` along an integer key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MarkovSourceSpec:
    """Two-state on/off chain (MGauss, MUnif, MRad) or the four-state M4 switcher.

    ``initial_state`` pins the first state; None draws it from the stationary
    law.  For M4 it is an index 0..3 into (-1,-1), (-1,+1), (+1,-1), (+1,+1).
    """
    kind: str
    p01: float = 3 / 970
    p10: float = 1 / 10
    mu_x: float = 0.0
    sigma_x_sq: float = 1.0
    low: float = 0.0
    high: float = 1.0
    error_prob: float = 0.03
    initial_state: int = None

    def __post_init__(self):
        if self.kind not in ("MGauss", "MUnif", "MRad", "M4"):
            raise ValueError(f"unknown Markov source kind {self.kind!r}")
        if self.kind == "M4":
            if not 0.0 <= self.error_prob < 1.0:
                raise ValueError("error_prob must lie in [0, 1)")
        else:
            for name in ("p01", "p10"):
                p = getattr(self, name)
                if not 0.0 < p < 1.0:
                    raise ValueError(f"{name} must lie in (0, 1), got {p}")
        if self.kind == "MGauss" and self.sigma_x_sq < 0:
            raise ValueError("sigma_x_sq must be nonnegative")
        if self.kind == "MUnif" and not self.low < self.high:
            raise ValueError("uniform bounds must satisfy low < high")

    @property
    def nonzero_prob(self):
        if self.kind == "M4":
            return 1.0
        return self.p01 / (self.p01 + self.p10)

    def second_moment(self):
        if self.kind in ("M4", "MRad"):
            return self.nonzero_prob
        if self.kind == "MGauss":
            return self.nonzero_prob * (self.sigma_x_sq + self.mu_x ** 2)
        return self.nonzero_prob * (self.low ** 2 + self.low * self.high + self.high ** 2) / 3


@dataclass(frozen=True)
class IidSourceSpec:
    """I.i.d. source: Bernoulli-Laplace with unit-variance Laplace, or a GM prior."""
    kind: str = "SparseLaplace"
    sparsity: float = 0.03
    gm: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("SparseLaplace", "ExplicitGM"):
            raise ValueError(f"unknown i.i.d. source kind {self.kind!r}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if self.kind == "ExplicitGM" and self.gm is None:
            raise ValueError("ExplicitGM needs a mixture")

    def second_moment(self):
        if self.kind == "SparseLaplace":
            return self.sparsity
        g = self.gm
        return float(np.sum(g.alpha * (g.sigma_sq + g.mu ** 2)))


def mgauss(**kw):
    return MarkovSourceSpec("MGauss", **kw)


def munif(**kw):
    return MarkovSourceSpec("MUnif", **kw)


def mrad(**kw):
    kw.setdefault("p01", 3 / 70)
    return MarkovSourceSpec("MRad", **kw)


def m4(**kw):
    return MarkovSourceSpec("M4", **kw)


def sparse_laplace(sparsity=0.03):
    return IidSourceSpec("SparseLaplace", sparsity)


def _onoff_states(spec, n, rng):
    # Alternating geometric sojourns realize the two-state chain exactly.
    state = rng.random() < spec.nonzero_prob if spec.initial_state is None \
        else bool(spec.initial_state)
    p_stay_on, p_stay_off = spec.p10, spec.p01
    first, second = (p_stay_on, p_stay_off) if state else (p_stay_off, p_stay_on)
    pieces, total = [], 0
    while total < n:
        # An even number of runs per batch, so each batch starts in ``state``.
        k = int((n - total) / (1.0 / spec.p01 + 1.0 / spec.p10)) + 16
        runs = np.empty(2 * k, dtype=np.int64)
        runs[0::2] = rng.geometric(first, k)
        runs[1::2] = rng.geometric(second, k)
        vals = np.zeros(2 * k, dtype=bool)
        vals[0::2] = state
        vals[1::2] = not state
        pieces.append(np.repeat(vals, runs))
        total += int(runs.sum())
    return np.concatenate(pieces)[:n]


def _m4_signal(spec, n, rng):
    s0 = int(rng.integers(4)) if spec.initial_state is None else int(spec.initial_state)
    # The scheduled symbol is always -x[j-2]; an error repeats x[j-2] instead,
    # so each parity class is a running product of sign flips.
    steps = np.where(rng.random(n) < spec.error_prob, 1.0, -1.0)
    steps[0] = (-1.0, -1.0, 1.0, 1.0)[s0]
    if n > 1:
        steps[1] = (-1.0, 1.0, -1.0, 1.0)[s0]
    x = np.empty(n)
    x[0::2] = np.cumprod(steps[0::2])
    x[1::2] = np.cumprod(steps[1::2])
    return x


def generate_signal(spec, n, seed):
    """Draw ``n`` samples of ``spec`` from the stream keyed by ``seed``."""
    if n < 1:
        raise ValueError("signal length must be positive")
    rng = rng_for(seed)
    if isinstance(spec, IidSourceSpec):
        if spec.kind == "SparseLaplace":
            on = rng.random(n) < spec.sparsity
            return np.where(on, rng.laplace(0.0, 1.0 / np.sqrt(2.0), n), 0.0)
        return spec.gm.sample(n, rng)
    if spec.kind == "M4":
        return _m4_signal(spec, n, rng)
    on = _onoff_states(spec, n, rng)
    if spec.kind == "MGauss":
        vals = spec.mu_x + np.sqrt(spec.sigma_x_sq) * rng.standard_normal(n)
    elif spec.kind == "MUnif":
        vals = rng.uniform(spec.low, spec.high, n)
    else:
        vals = rng.choice((-1.0, 1.0), n)
    return np.where(on, vals, 0.0)


class MatrixOperator:
    """A with i.i.d. N(0, 1/M) entries, produced in seeded row blocks.

    Products are always formed block by block in the same order, so keeping
    the blocks in memory or regenerating them on every call gives bit-identical
    results.
    """

    block_rows = 512

    def __init__(self, M, N, seed, cache=True):
        self.M, self.N, self.seed = int(M), int(N), int(seed)
        self.cache = bool(cache)
        self._blocks = None
        if self.cache:
            self._blocks = [self._make_block(b) for b in range(self.n_blocks)]

    @property
    def n_blocks(self):
        return -(-self.M // self.block_rows)

    def _make_block(self, b):
        lo = b * self.block_rows
        rows = min(self.block_rows, self.M - lo)
        rng = rng_for(self.seed, b)
        blk = rng.standard_normal((rows, self.N))
        blk *= 1.0 / np.sqrt(self.M)
        return blk

    def _block(self, b):
        return self._blocks[b] if self._blocks is not None else self._make_block(b)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.N,):
            raise ValueError(f"expected length {self.N}, got {x.shape}")
        out = np.empty(self.M)
        for b in range(self.n_blocks):
            lo = b * self.block_rows
            blk = self._block(b)
            out[lo:lo + blk.shape[0]] = blk @ x
        return out

    def rmatvec(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.M,):
            raise ValueError(f"expected length {self.M}, got {r.shape}")
        out = np.zeros(self.N)
        for b in range(self.n_blocks):
            lo = b * self.block_rows
            blk = self._block(b)
            out += r[lo:lo + blk.shape[0]] @ blk
        return out

    def dense(self):
        return np.vstack([self._block(b) for b in range(self.n_blocks)])


@dataclass(frozen=True)
class MeasurementSystem:
    M: int
    N: int
    sigma_z_sq: float
    matrix_seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        if self.sigma_z_sq < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def R(self):
        return self.M / self.N

    def operator(self, cache=None, budget_bytes=2 ** 31):
        """Build A; by default it is cached when it fits in ``budget_bytes``."""
        if cache is None:
            cache = 8 * self.M * self.N <= budget_bytes
        return MatrixOperator(self.M, self.N, self.matrix_seed, cache)


def noise_for_snr(second_moment, R, snr):
    """sigma_z^2 giving input SNR ``snr`` dB for a signal with E[X^2] given."""
    return second_moment / (R * 10.0 ** (snr / 10.0))


def measure(x, sys, noise_seed, op=None):
    """y = A x + z with A from ``sys.matrix_seed`` and z from ``noise_seed``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.N,):
        raise ValueError(f"signal length {x.size} does not match N={sys.N}")
    op = sys.operator() if op is None else op
    z = np.sqrt(sys.sigma_z_sq) * rng_for(noise_seed).standard_normal(sys.M)
    return op.matvec(x) + z


def snr_db(x, sys):
    if sys.sigma_z_sq <= 0:
        raise ValueError("SNR is infinite for noiseless measurements")
    x = np.asarray(x, dtype=float)
    return 10.0 * np.log10(sys.N * np.mean(x ** 2) / (sys.M * sys.sigma_z_sq))


def sdr_db(x_true, x_hat):
    """Signal-to-distortion ratio in dB; ``inf`` on exact recovery."""
    x_true = np.asarray(x_true, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_true.shape != x_hat.shape:
        raise ValueError("signals must have equal length")
    energy = np.mean(x_true ** 2)
    if energy == 0:
        raise ValueError("SDR undefined for a zero signal")
    mse = np.mean((x_true - x_hat) ** 2)
    if mse == 0:
        return np.inf
    return 10.0 * np.log10(energy / mse)
