"""Time the compiled and numpy kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--n 2000 10000 100000] [--repeat 3]

Prints one line per (kernel, n, backend) with the best wall time, and the
speedup of the compiled backend when it is available.
"""
import argparse
import time

import numpy as np

from ampud import kernels
from ampud.gm import EmConfig, HALF_NPARS, initial_means
from ampud.sources import generate_signal, rng_for, sparse_laplace


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, seed=0):
    sv = 0.05
    x = generate_signal(sparse_laplace(), n, seed)
    q = x + np.sqrt(sv) * rng_for(seed, 1).standard_normal(n)
    cfg = EmConfig()
    mu = initial_means(q, cfg, rng_for(seed, 2))
    S = mu.size
    alpha = np.full(S, 1.0 / S)
    var = np.full(S, max(np.var(q) / 10, sv))
    gm = (np.array([0.97, 0.015, 0.015]), np.array([0.0, -1.0, 1.0]), np.array([1e-4, 0.5, 0.5]))

    def em(mod):
        return lambda: mod.em_sweeps(q, alpha, mu, var, sv, False, 0.2, 0.9, HALF_NPARS,
                                     1e-5, 500)

    def den(mod):
        return lambda: mod.gm_denoise(q, *gm, sv)

    def scan(mod):
        return lambda: mod.init_scan(q, mu[:3], 0.1 * np.std(q))

    return {"em_sweeps": em, "gm_denoise": den, "init_scan": scan}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[2000, 10000, 100000])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    mods = kernels.backends()
    print(f"backends: {', '.join(mods)}")
    print(f"{'kernel':<12}{'n':>8}  " + "".join(f"{b:>10}" for b in mods) + "   speedup")
    for n in args.n:
        for name, make in cases(n).items():
            times = {b: _best(make(m), args.repeat) for b, m in mods.items()}
            sp = times["python"] / times["cython"] if "cython" in times else float("nan")
            cols = "".join(f"{times[b]:>9.4f}s" for b in mods)
            print(f"{name:<12}{n:>8}  {cols}   {sp:6.2f}x")


if __name__ == "__main__":
    main()
