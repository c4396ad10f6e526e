"""Batch reconstruction experiments driven by a flat key=value config."""
import csv
import dataclasses
import hashlib
import os
import time
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np

from . import sources
from .amp import AmpDivergenceError, DampingPolicy, default_policy, run_amp, run_amp_ud
from .gm import denoise_iid
from .sources import MeasurementSystem, derive_seed, generate_signal, measure, noise_for_snr, sdr_db
from .stdct import ShortTimeDct, SynthesisOperator, ingest_audio
from .universal import ContextConfig, fit_or_fallback

SOURCES = {
    "sparse_laplace": sources.sparse_laplace,
    "mgauss": sources.mgauss,
    "munif": sources.munif,
    "mrad": sources.mrad,
    "m4": sources.m4,
}


def make_source(name):
    try:
        return SOURCES[name]()
    except KeyError:
        raise ValueError(f"unknown source {name!r}; choose from {sorted(SOURCES)}") from None


@dataclass
class ExperimentConfig:
    source: str = "sparse_laplace"
    input: str = ""
    length: int = 0
    N: int = 10000
    rates: tuple = (0.4,)
    snrs: tuple = (10.0,)
    variant: str = "UD1"
    trials: int = 1
    seed: int = 0
    out_dir: str = "ampud_out"
    k: int = 6
    b1: float = 0.3
    b2: float = 0.5
    T: int = 256
    L_init: int = 0
    kl_stop: float = 2.0
    damping: str = "default"
    t_max: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        if self.variant not in ("UD1", "UD2", "iid"):
            raise ValueError("variant must be UD1, UD2 or iid")
        if self.damping not in ("default", "adaptive"):
            float(self.damping)

    def ud_config(self):
        return ContextConfig(k=self.k, b1=self.b1, b2=self.b2, T=self.T,
                             L_init=self.L_init or None, kl_stop=self.kl_stop,
                             variant="UD1" if self.variant == "iid" else self.variant)

    def policy(self):
        pol, steps = default_policy("UD1" if self.variant == "iid" else self.variant)
        if self.damping == "adaptive":
            pol = DampingPolicy("Adaptive")
        elif self.damping != "default":
            pol = DampingPolicy("Fixed", lam=float(self.damping))
        return pol, self.t_max or steps

    def dump(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(u)) for u in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(field, text):
    if field.type in ("tuple", tuple):
        return tuple(float(u) for u in text.split(",") if u.strip())
    if field.type in ("int", int):
        return int(text)
    if field.type in ("float", float):
        return float(text)
    return text


def parse_config(text, overrides=None):
    """Parse ``key = value`` lines (``#`` comments) then apply ``overrides``."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    vals = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {n}: unknown key {key!r}")
        vals[key] = _coerce(fields[key], val)
    for key, val in (overrides or {}).items():
        if val is not None:
            vals[key] = _coerce(fields[key], val) if isinstance(val, str) else val
    return ExperimentConfig(**vals)


def trial_seed(master, R, snr, trial):
    """Seed for one (R, SNR, trial) cell, independent of scheduling."""
    key = f"{int(master)}|{float(R)!r}|{float(snr)!r}|{int(trial)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


class IidGmDenoiser:
    """One GM fitted to the whole sequence each call, ignoring memory."""

    def __init__(self, seed=0, em=None):
        self.seed, self.calls, self.em = seed, 0, em

    def __call__(self, q, sigma_v_sq):
        gm, _ = fit_or_fallback(q, sigma_v_sq, self.em, derive_seed(self.seed, self.calls))
        self.calls += 1
        return denoise_iid(gm, sigma_v_sq, q)


def load_signal(cfg):
    """Ground truth and its provenance: a WAV/raw file or a synthetic source."""
    if cfg.input:
        if cfg.input.lower().endswith(".wav"):
            x, meta = ingest_audio(cfg.input, cfg.length or None)
        else:
            x = np.fromfile(cfg.input, dtype="<f8")
            if cfg.length:
                x = x[:cfg.length]
            meta = {"samples": x.size}
        return x, os.path.basename(cfg.input), meta
    return None, cfg.source, {}


def reconstruct(cfg, R, snr, trial):
    """One cell: returns ``(row, x, x_hat, trace)``; ``x_hat`` is None after divergence."""
    seed = trial_seed(cfg.seed, R, snr, trial)
    x, label, _ = load_signal(cfg)
    transform = None
    if x is None:
        x = generate_signal(make_source(cfg.source), cfg.N, derive_seed(seed, 0))
    else:
        transform = ShortTimeDct(x.size)
        x = np.concatenate([x, np.zeros(transform.pad)])
    N = x.size
    M = max(1, int(round(R * N)))
    sz = noise_for_snr(float(np.mean(x ** 2)), M / N, snr)
    sys = MeasurementSystem(M, N, sz, derive_seed(seed, 1))
    op = sys.operator()
    y = measure(x, sys, derive_seed(seed, 2), op)
    truth = x
    if transform is not None:
        op = SynthesisOperator(op, transform)
        truth = transform.forward(x)
    policy, t_max = cfg.policy()
    t0 = time.perf_counter()
    status, est = "ok", None
    try:
        if cfg.variant == "iid":
            res = run_amp(y, op, IidGmDenoiser(derive_seed(seed, 3)), policy, t_max, truth)
        else:
            res = run_amp_ud(y, op, cfg.ud_config(), policy, t_max, derive_seed(seed, 3), truth)
        est = res.x if transform is None else transform.inverse(res.x)
        sdr, trace = sdr_db(x, est), res.trace
        iters = len(trace) - 1
    except AmpDivergenceError as exc:
        sdr, iters, trace = float("nan"), exc.t, exc.trace
        status = f"diverged at t={exc.t}; last sigma_hat_sq={trace[-1]['sigma_hat_sq']:.4g}"
    row = {"variant": cfg.variant, "source": label, "N": N, "R": R, "snr_db": snr,
           "trial": trial, "seed": seed, "sdr_db": sdr,
           "runtime_s": time.perf_counter() - t0, "iterations": iters, "status": status}
    return row, x, est, trace


def run_trial(cfg, R, snr, trial):
    return reconstruct(cfg, R, snr, trial)[0]


RESULT_FIELDS = ("variant", "source", "N", "R", "snr_db", "trial", "seed", "sdr_db",
                 "runtime_s", "iterations")


def format_row(row):
    out = dict(row)
    out["R"] = f"{row['R']:g}"
    out["snr_db"] = f"{row['snr_db']:.4f}"
    out["sdr_db"] = f"{row['sdr_db']:.4f}"
    out["runtime_s"] = f"{row['runtime_s']:.3f}"
    return [out[k] for k in RESULT_FIELDS]


def _run_cell(args):
    return run_trial(*args)


def summarize(rows):
    """Mean and standard error of SDR per (variant, source, R, SNR), diverged trials excluded."""
    cells = {}
    for r in rows:
        cells.setdefault((r["variant"], r["source"], r["R"], r["snr_db"]), []).append(r["sdr_db"])
    out = []
    for key, vals in cells.items():
        v = np.array([u for u in vals if np.isfinite(u)])
        se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        out.append(key + (float(v.mean()) if v.size else float("nan"), se, v.size, len(vals)))
    return out


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "source", "R", "snr_db", "mean_sdr_db", "stderr_db", "ok", "trials"])
        for v, src, R, snr, m, se, ok, n in summarize(rows):
            w.writerow([v, src, f"{R:g}", f"{snr:.4f}", f"{m:.4f}", f"{se:.4f}", ok, n])


def run_experiment(cfg, log=None):
    """Run every (R, SNR, trial) cell; write config.txt, results.csv and summary.csv."""
    cells = [(cfg, R, snr, t) for R in cfg.rates for snr in cfg.snrs for t in range(cfg.trials)]
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            rows = list(pool.imap(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.dump())
    with open(os.path.join(cfg.out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for row in rows:
            w.writerow(format_row(row))
            if log is not None and row["status"] != "ok":
                log(f"R={row['R']} snr={row['snr_db']} trial={row['trial']}: {row['status']}")
    write_summary(os.path.join(cfg.out_dir, "summary.csv"), rows)
    return rows
