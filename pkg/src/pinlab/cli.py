"""Command-line experiment runner.

    pinlab SUBCOMMAND --config run.ini --out results/ [--threads N] [--seed S] [--assert]

Each run writes ``<subcommand>.csv`` (plus auxiliary tables for some
recipes) and ``manifest.json`` into the output directory.  Output depends only
on the config file contents and the master seed.

Exit codes: 0 success, 2 config error, 3 budget error, 4 failed check in
``--assert`` mode.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .changemeasure import (
    PotentialSpec, TruncationSpec, K_cut_for, X_full, ce_statistic, holder_chain_check,
    holder_factor, sum_V_squared,
)
from .coarsegrain import (
    CoarseGrainPlan, ShiftParams, P_I_decay_fit, all_subsets, bitmask, coarse_length,
    gap_scaling_slope, hatZ_I_batch,
)
from .disorder import DisorderSpec, log_mgf, sample_iid
from .errors import BudgetError, ConfigError, PinlabError
from .pinning import (
    PinningSystem, fractional_moment, log_partition_batch, monotonicity_scan, pure_free_energy,
    quenched_free_energy, replica_omegas,
)
from .renewal import build_model, check_doney, intersection_persistence, local_time_law
from .seeding import experiment_rng, replica_rng
from .slowvar import SlowlyVaryingSpec

SUBCOMMANDS = (
    "renewal-check", "free-energy", "monotonicity", "cg-identity", "pi-decay", "cm-variance",
    "ce-law", "local-time", "shift-table", "fm-bound", "holder-chain",
)


# -- configuration ------------------------------------------------------------

def _floats(raw: str) -> list:
    return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]


def _ints(raw: str) -> list:
    out = []
    for x in _floats(raw):
        if x != int(x):
            raise ValueError(f"{x} is not an integer")
        out.append(int(x))
    return out


@dataclass
class ExperimentConfig:
    alpha: float = 0.5
    L: SlowlyVaryingSpec = field(default_factory=SlowlyVaryingSpec.trivial)
    N_max: int = 4096
    family: str = "gaussian"
    bound: float = 2.0
    betas: list = field(default_factory=lambda: [0.5])
    hs: list = field(default_factory=lambda: [0.5])
    Ns: list = field(default_factory=lambda: [256])
    replicas: int = 200
    master_seed: int = 0
    q: int = 3
    A: list = field(default_factory=lambda: [1.0])
    gamma: float = 6 / 7
    K_cut: float | None = None
    xi_exponent: float = 1.4
    epsilon_block: float = 0.1
    samples: int = 2000
    k: list = field(default_factory=lambda: [64])
    m: int = 3
    threshold: float | None = None
    k_cap: float = 1e18
    raw: dict = field(default_factory=dict)

    @property
    def disorder(self) -> DisorderSpec:
        return DisorderSpec(self.family, self.bound)


_SCHEMA = {
    # key path: (attribute, parser)
    "model.alpha": ("alpha", float),
    "model.l": ("L", lambda s: SlowlyVaryingSpec.from_dict(json.loads(s))),
    "model.n_max": ("N_max", int),
    "disorder.family": ("family", str.strip),
    "disorder.bound": ("bound", float),
    "run.betas": ("betas", _floats),
    "run.hs": ("hs", _floats),
    "run.n": ("Ns", _ints),
    "run.replicas": ("replicas", int),
    "run.master_seed": ("master_seed", int),
    "method.q": ("q", int),
    "method.a": ("A", _floats),
    "method.gamma": ("gamma", float),
    "method.k_cut": ("K_cut", float),
    "method.xi_exponent": ("xi_exponent", float),
    "method.epsilon_block": ("epsilon_block", float),
    "method.samples": ("samples", int),
    "method.k": ("k", _ints),
    "method.m": ("m", int),
    "method.threshold": ("threshold", float),
    "method.k_cap": ("k_cap", float),
}


def load_config(text: str) -> ExperimentConfig:
    """Parse an INI config; errors name the offending ``section.key``."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unparseable config: {e}") from None
    cfg = ExperimentConfig()
    raw = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            path = f"{section.lower()}.{key.lower()}"
            if path not in _SCHEMA:
                raise ConfigError(f"{path}: unknown key")
            attr, parse = _SCHEMA[path]
            try:
                setattr(cfg, attr, parse(value))
            except (ValueError, TypeError, KeyError, json.JSONDecodeError, PinlabError) as e:
                raise ConfigError(f"{path}: {e}") from None
            raw[path] = value
    cfg.raw = raw
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    def need(ok, path, msg):
        if not ok:
            raise ConfigError(f"{path}: {msg}")

    need(cfg.alpha >= 0, "model.alpha", "must be >= 0")
    need(cfg.N_max >= 2, "model.n_max", "must be >= 2")
    try:
        cfg.disorder
    except PinlabError as e:
        raise ConfigError(f"disorder.family: {e}") from None
    need(all(b >= 0 for b in cfg.betas), "run.betas", "must be >= 0")
    need(all(0 < n <= cfg.N_max for n in cfg.Ns), "run.n", f"must lie in 1..{cfg.N_max}")
    need(cfg.replicas >= 2, "run.replicas", "must be >= 2")
    need(cfg.master_seed >= 0, "run.master_seed", "must be >= 0")
    need(cfg.q >= 2, "method.q", "must be >= 2")
    need(all(a > 0 for a in cfg.A), "method.a", "must be positive")
    need(0 < cfg.gamma < 1, "method.gamma", "must lie in (0, 1)")
    need(cfg.K_cut is None or cfg.K_cut > 0, "method.k_cut", "must be positive")
    need(1 < cfg.xi_exponent < 1.5, "method.xi_exponent", "must lie in (1, 3/2)")
    need(0 < cfg.epsilon_block <= 1, "method.epsilon_block", "must lie in (0, 1]")
    need(cfg.samples >= 2, "method.samples", "must be >= 2")
    need(all(k >= 1 for k in cfg.k), "method.k", "must be >= 1")
    need(cfg.m >= 1, "method.m", "must be >= 1")
    need(cfg.threshold is None or cfg.threshold > 0, "method.threshold", "must be positive")


# -- recipes --------------------------------------------------------------------

@dataclass
class Result:
    tables: dict  # file stem -> (header, rows)
    checks: dict  # name -> bool
    streams: list = field(default_factory=list)


def _model(cfg):
    return build_model(cfg.alpha, cfg.L, cfg.N_max)


def renewal_check(cfg, seed, threads):
    model = _model(cfg)
    ns = sorted({int(round(x)) for x in np.geomspace(1, cfg.N_max, 25)})
    rows, ratios = [], []
    for n in ns:
        r = check_doney(model, n) if 0 < cfg.alpha < 1 else math.nan
        ratios.append(r)
        rows.append([n, model.u[n], r])
    p = intersection_persistence(model)
    rows_p = [[p.partial_sum, p.classification.value]]
    ok = not (0 < cfg.alpha < 1) or abs(ratios[-1] - 1) < abs(ratios[0] - 1)
    return Result({"renewal-check": (["n", "u", "doney_ratio"], rows),
                   "renewal-persistence": (["partial_sum_u2", "classification"], rows_p)},
                  {"doney_ratio_improves": ok})


def free_energy(cfg, seed, threads):
    model, dis = _model(cfg), cfg.disorder
    rows, ok = [], True
    for N in cfg.Ns:
        allowance = 2 * math.log(N) / N
        for beta in cfg.betas:
            for h in cfg.hs:
                e = quenched_free_energy(PinningSystem(model, dis, beta, h), N, cfg.replicas, seed,
                                         "free-energy", threads)
                upper = pure_free_energy(model, h)
                lower = pure_free_energy(model, h - log_mgf(dis, beta))
                inside = lower - allowance <= e.value <= upper + 3 * e.std_error
                ok &= inside
                rows.append([N, beta, h, e.value, e.std_error, cfg.replicas, seed, lower, upper, int(inside)])
    head = ["N", "beta", "h", "estimate", "std_error", "replicas", "seed", "lower", "upper", "within"]
    return Result({"free-energy": (head, rows)}, {"bounds": ok}, ["free-energy"])


def monotonicity(cfg, seed, threads):
    model, dis = _model(cfg), cfg.disorder
    rows, ok = [], True
    for N in cfg.Ns:
        for h in cfg.hs:
            scan = monotonicity_scan(model, dis, h, cfg.betas, N, cfg.replicas, seed,
                                     "monotonicity", threads)
            flagged = {b for _, b, _, _ in scan.violations}
            ok &= scan.monotone
            for e in scan.estimates:
                rows.append([N, e.beta, h, e.value, e.std_error, cfg.replicas, seed, int(e.beta in flagged)])
    head = ["N", "beta", "h", "estimate", "std_error", "replicas", "seed", "increase_flag"]
    return Result({"monotonicity": (head, rows)}, {"monotone": ok}, ["monotonicity"])


def cg_identity(cfg, seed, threads):
    model, dis = _model(cfg), cfg.disorder
    rows, worst = [], 0.0
    for k in cfg.k:
        plan = CoarseGrainPlan(k, cfg.m)
        subsets = all_subsets(cfg.m)
        for beta in cfg.betas:
            for h in cfg.hs:
                sys_ = PinningSystem(model, dis, beta, h)
                om = replica_omegas(dis, plan.N, seed, "cg-identity", 0, cfg.replicas)
                logZ = log_partition_batch(sys_, om)
                parts = hatZ_I_batch(sys_, om, plan, subsets)
                mx = parts.max(axis=1)
                logsum = mx + np.log(np.exp(parts - mx[:, None]).sum(axis=1))
                rel = np.abs(np.expm1(logsum - logZ))
                worst = max(worst, float(rel.max()))
                for i in range(cfg.replicas):
                    rows.append([k, cfg.m, beta, h, i, logZ[i], logsum[i], rel[i]])
    head = ["k", "m", "beta", "h", "replica", "log_Z", "log_sum_hatZ", "rel_err"]
    return Result({"cg-identity": (head, rows)}, {"identity": worst < 1e-10}, ["cg-identity"])


def pi_decay(cfg, seed, threads):
    model = _model(cfg)
    rows, fits, ok = [], [], True
    for k in cfg.k:
        fit = P_I_decay_fit(model, k, cfg.m, cfg.xi_exponent)
        ok &= fit.violations == 0
        fits.append([k, cfg.m, fit.C1, fit.C2, fit.violations, fit.max_violation])
        for I, P, bound in fit.table:
            rows.append([k, bitmask(I), len(I), math.log(P), bound])
    tables = {"pi-decay": (["k", "I_bitmask", "size", "log_P_I", "bound"], rows),
              "pi-decay-fit": (["k", "m", "C1", "C2", "violations", "max_violation"], fits)}
    checks = {"zero_violations": ok}
    if cfg.alpha == 0.5 and cfg.m >= 4:
        slope = gap_scaling_slope(model, cfg.k[-1], min(cfg.m - 1, 9))
        tables["pi-decay-slope"] = (["k", "slope", "target"], [[cfg.k[-1], slope, -cfg.xi_exponent + 0.2]])
        checks["gap_slope"] = slope <= -cfg.xi_exponent + 0.2
    return Result(tables, checks)


def cm_variance(cfg, seed, threads):
    rows, ok = [], True
    for k in cfg.k:
        ps = PotentialSpec.build(cfg.q, k, cfg.L)
        s = sum_V_squared(ps)
        rows.append(["sum_V_squared", k, s, 0.0, 1.0, int(0.8 <= s <= 1.1)])
        ok &= 0.8 <= s <= 1.1
        if float(k) ** cfg.q <= 2 ** 24:
            X = X_full(ps, sample_iid(cfg.disorder, k, experiment_rng(seed, f"cm-variance/{k}"),
                                      size=cfg.samples))
            v = float(X.var(ddof=1))
            # standard error of a sample variance from the fourth moment
            se = math.sqrt(max(float(np.mean((X - X.mean()) ** 4)) - v * v, 0.0) / X.size)
            rows.append(["var_X_over_sum_V_squared", k, v / s, se / s, 1.0, int(0.9 <= v / s <= 1.1)])
            ok &= 0.9 <= v / s <= 1.1
    head = ["statistic", "k", "estimate", "std_error", "target", "verdict"]
    return Result({"cm-variance": (head, rows)}, {"normalization": ok},
                  [f"cm-variance/{k}" for k in cfg.k])


def ce_law(cfg, seed, threads):
    model = _model(cfg)
    rows, variances, ok = [], [], True
    for N in cfg.Ns:
        r = ce_statistic(model, N, 1.0, cfg.samples, experiment_rng(seed, "ce-law"))
        close = abs(r.mean / r.target - 1) <= 0.15
        variances.append(r.variance)
        rows.append(["ce_mean", N, r.mean, r.std_error, r.target, int(close)])
        rows.append(["ce_variance", N, r.variance, math.nan, 0.0, 1])
    ok = bool(rows) and rows[-2][-1] == 1 and all(b < a for a, b in zip(variances, variances[1:]))
    head = ["statistic", "N", "estimate", "std_error", "target", "verdict"]
    return Result({"ce-law": (head, rows)}, {"ce_law": ok}, ["ce-law"])


def local_time(cfg, seed, threads):
    model = _model(cfg)
    rows = []
    for N in cfg.Ns:
        r = local_time_law(model, N, cfg.samples, experiment_rng(seed, f"local-time/{N}"))
        rows.append(["ks_distance", N, r.ks_distance, math.nan, 0.05, int(r.ks_distance < 0.05)])
    head = ["statistic", "N", "estimate", "std_error", "target", "verdict"]
    return Result({"local-time": (head, rows)}, {"ks": rows[-1][-1] == 1},
                  [f"local-time/{N}" for N in cfg.Ns])


def shift_table(cfg, seed, threads):
    rows, ok = [], True
    for A in cfg.A:
        deltas = []
        for beta in sorted(cfg.betas):
            if beta <= 0:
                raise ConfigError("run.betas: shift table needs beta > 0")
            cl = coarse_length(ShiftParams(cfg.q, A, beta), cfg.L, int(cfg.k_cap))
            deltas.append(cl.delta)
            rows.append([cfg.q, A, beta, cl.k, cl.delta])
        ok &= all(b >= a for a, b in zip(deltas, deltas[1:]))
    return Result({"shift-table": (["q", "A", "beta", "k", "delta"], rows)}, {"delta_monotone": ok})


def fm_bound(cfg, seed, threads):
    model, dis = _model(cfg), cfg.disorder
    rows, ok = [], True
    for N in cfg.Ns:
        for beta in cfg.betas:
            for h in cfg.hs:
                sys_ = PinningSystem(model, dis, beta, h)
                fm = fractional_moment(sys_, cfg.gamma, N, cfg.replicas, seed, "fm-bound", threads)
                e = quenched_free_energy(sys_, N, cfg.replicas, seed, "fm-bound", threads)
                bound = math.log(fm.estimate + 3 * fm.std_error) / (cfg.gamma * N)
                holds = e.value <= bound
                ok &= holds
                rows.append([N, beta, h, cfg.gamma, fm.estimate, fm.std_error, e.value, e.std_error,
                             bound, int(holds)])
    head = ["N", "beta", "h", "gamma", "fm_estimate", "fm_std_error", "quenched", "quenched_se",
            "fm_bound", "holds"]
    return Result({"fm-bound": (head, rows)}, {"fm_bound": ok}, ["fm-bound"])


def holder_chain(cfg, seed, threads):
    model, dis = _model(cfg), cfg.disorder
    K = cfg.K_cut if cfg.K_cut is not None else K_cut_for(cfg.gamma)
    tspec = TruncationSpec(K)
    rows, ok = [], True
    for k in cfg.k:
        plan = CoarseGrainPlan(k, cfg.m)
        ps = PotentialSpec(cfg.q, k, model.env)
        hf = holder_factor(tspec, ps, cfg.samples, experiment_rng(seed, f"holder-factor/{k}"),
                           cfg.gamma, dis)
        ok &= hf.mc_estimate <= 2.0
        rows.append([k, "factor", 0, hf.mc_estimate, hf.std_error, hf.exact_bound, math.nan,
                     int(hf.mc_estimate <= 2.0)])
        for beta in cfg.betas:
            for h in cfg.hs:
                sys_ = PinningSystem(model, dis, beta, h)
                for I in all_subsets(cfg.m):
                    if len(I) > 3:
                        continue
                    r = holder_chain_check(sys_, plan, I, tspec, ps, cfg.samples,
                                           replica_rng(seed, "holder-chain", bitmask(I)), cfg.gamma)
                    ok &= r.holds
                    rows.append([k, f"beta={beta};h={h}", bitmask(I), r.lhs, r.lhs_se, r.rhs_upper,
                                 r.eta_ratio, int(r.holds)])
    head = ["k", "case", "I_bitmask", "lhs", "lhs_se", "rhs_upper", "eta_ratio", "holds"]
    return Result({"holder-chain": (head, rows)}, {"holder": ok},
                  ["holder-chain", *(f"holder-factor/{k}" for k in cfg.k)])


RECIPES = {
    "renewal-check": renewal_check, "free-energy": free_energy, "monotonicity": monotonicity,
    "cg-identity": cg_identity, "pi-decay": pi_decay, "cm-variance": cm_variance,
    "ce-law": ce_law, "local-time": local_time, "shift-table": shift_table,
    "fm-bound": fm_bound, "holder-chain": holder_chain,
}


# -- output --------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def run(subcommand: str, config_path, out_dir, threads: int = 1, seed: int | None = None) -> Result:
    if subcommand not in RECIPES:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    try:
        text = Path(config_path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    cfg = load_config(text)
    master = cfg.master_seed if seed is None else int(seed)
    if master < 0:
        raise ConfigError("--seed: must be >= 0")
    res = RECIPES[subcommand](cfg, master, threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for stem, (header, rows) in res.tables.items():
        write_table(out / f"{stem}.csv", header, rows)
        files.append(f"{stem}.csv")
    manifest = {
        "subcommand": subcommand,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config": cfg.raw,
        "master_seed": master,
        "seed_scheme": "SeedSequence(master_seed, spawn_key=(crc32(stream), replica index))",
        "streams": res.streams,
        "outputs": files,
        "checks": {k: bool(v) for k, v in res.checks.items()},
        "versions": {"pinlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return res


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pinlab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="INI config path")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit 4 when a recipe check fails")
    args = ap.parse_args(argv)
    try:
        res = run(args.subcommand, args.config, args.out, args.threads, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except BudgetError as e:
        print(f"budget error: {e}", file=sys.stderr)
        return 3
    for name, ok in res.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    if args.check and not all(res.checks.values()):
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
