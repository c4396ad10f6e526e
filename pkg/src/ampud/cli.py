"""ampud command line: generate, denoise, reconstruct, se-verify, benchmark."""
import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .amp import write_trace
from .experiment import (ExperimentConfig, format_row, make_source, parse_config,
                         reconstruct, run_experiment, RESULT_FIELDS, SOURCES)
from .gm import denoise_iid
from .se import verify_tracking
from .sources import MeasurementSystem, derive_seed, generate_signal, noise_for_snr, rng_for
from .stdct import write_wav
from .universal import ContextConfig, UniversalDenoiser, fit_or_fallback
from .window import WindowDenoiser


def _read_vector(path):
    if path.lower().endswith(".csv"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, -1]
    return np.fromfile(path, dtype="<f8")


def _write_columns(path, names, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for vals in zip(*cols):
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in vals])


def _echo(out_dir, args, skip=("func",)):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        for k, v in sorted(vars(args).items()):
            if k not in skip:
                fh.write(f"{k} = {v}\n")


def cmd_generate(args):
    x = generate_signal(make_source(args.source), args.N, args.seed)
    _echo(args.out_dir, args)
    x.astype("<f8").tofile(os.path.join(args.out_dir, "signal.f64"))
    _write_columns(os.path.join(args.out_dir, "signal.csv"), ["i", "x"],
                   [range(x.size), x.tolist()])
    print(f"wrote {x.size} samples to {args.out_dir}")


def cmd_denoise(args):
    x = None
    if args.input:
        q = _read_vector(args.input)
    else:
        x = generate_signal(make_source(args.source), args.N, derive_seed(args.seed, 0))
        q = x + np.sqrt(args.sigma_v_sq) * rng_for(args.seed, 1).standard_normal(x.size)
    sv = args.sigma_v_sq
    if args.variant == "iid":
        gm, _ = fit_or_fallback(q, sv, None, derive_seed(args.seed, 2))
        eta, _ = denoise_iid(gm, sv, q)
    else:
        ud = UniversalDenoiser(ContextConfig(variant=args.variant, k=args.k, b1=args.b1,
                                             b2=args.b2, T=args.T, kl_stop=args.kl_stop),
                               derive_seed(args.seed, 2))
        eta, _ = ud(q, sv)
    _echo(args.out_dir, args)
    names, cols = ["i", "q", "eta"], [range(q.size), q.tolist(), eta.tolist()]
    if x is not None:
        names.insert(1, "x")
        cols.insert(1, x.tolist())
        print(f"mse {np.mean((eta - x) ** 2):.6g}  input mse {np.mean((q - x) ** 2):.6g}")
    _write_columns(os.path.join(args.out_dir, "denoised.csv"), names, cols)


def _experiment_config(args):
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    over = {f.name: getattr(args, f.name) for f in dataclasses.fields(ExperimentConfig)}
    return parse_config(text, over)


def cmd_reconstruct(args):
    cfg = _experiment_config(args)
    row, x, est, trace = reconstruct(cfg, cfg.rates[0], cfg.snrs[0], 0)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.dump())
    with open(os.path.join(cfg.out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        w.writerow(format_row(row))
    write_trace(os.path.join(cfg.out_dir, "trace.csv"), trace)
    if est is None:
        print(row["status"], file=sys.stderr)
        return 1
    _write_columns(os.path.join(cfg.out_dir, "estimate.csv"), ["i", "x", "x_hat"],
                   [range(x.size), x.tolist(), est.tolist()])
    if cfg.input.lower().endswith(".wav"):
        write_wav(os.path.join(cfg.out_dir, "estimate.wav"), est)
    print(f"SDR {row['sdr_db']:.4f} dB after {row['iterations']} iterations")
    return 0


def cmd_benchmark(args):
    cfg = _experiment_config(args)
    rows = run_experiment(cfg, log=lambda m: print(m, file=sys.stderr))
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} trials, {bad} diverged; results in {cfg.out_dir}")


def cmd_se_verify(args):
    kind = args.source
    if kind not in ("mgauss", "m4"):
        raise SystemExit("se-verify supports the mgauss and m4 sources")
    spec = make_source(kind)
    M = int(round(args.R * args.N))
    sz = noise_for_snr(spec.second_moment(), M / args.N, args.snr)
    sys_ = MeasurementSystem(M, args.N, sz, 0)
    tr = verify_tracking(spec, WindowDenoiser(spec, args.k), sys_, args.trials, args.seed,
                         args.t_max, args.n_mc, args.snr)
    _echo(args.out_dir, args)
    tr.write_csv(os.path.join(args.out_dir, "se.csv"))
    print(f"max |empirical - predicted| = {tr.max_deviation_db():.3f} dB")


def _add_experiment_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("tuple", tuple):
            p.add_argument(flag, dest=f.name, help=f"comma list (default {f.default})")
        else:
            p.add_argument(flag, dest=f.name, help=f"default {f.default}")


def build_parser():
    ap = argparse.ArgumentParser(prog="ampud", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic signal")
    p.add_argument("--source", choices=sorted(SOURCES), default="mgauss")
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="ampud_out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("denoise", help="scalar-channel denoising of q = x + noise")
    p.add_argument("--input", help="noisy sequence (raw float64 LE or CSV, last column)")
    p.add_argument("--source", choices=sorted(SOURCES), default="mgauss")
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--sigma-v-sq", type=float, required=True)
    p.add_argument("--variant", choices=["UD1", "UD2", "iid"], default="UD1")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--b1", type=float, default=0.3)
    p.add_argument("--b2", type=float, default=0.5)
    p.add_argument("--T", type=int, default=256)
    p.add_argument("--kl-stop", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="ampud_out")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("reconstruct", help="one AMP reconstruction at the first R and SNR")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("benchmark", help="every (R, SNR, trial) cell of a config")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("se-verify", help="AMP against state evolution with a window denoiser")
    p.add_argument("--source", choices=["mgauss", "m4"], default="mgauss")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--N", type=int, default=20000)
    p.add_argument("--R", type=float, default=0.4)
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--n-mc", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="ampud_out")
    p.set_defaults(func=cmd_se_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as exc:
        print(f"ampud: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
