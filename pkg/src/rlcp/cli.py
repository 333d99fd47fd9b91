"""Command-line driver.

Each run writes into ``<out>/<command>-<hash>/`` where the hash covers the
full configuration (seed included), so distinct runs never overwrite each
other. Files:

``points.csv``
    one row per (method, trial, test point):
    ``method, trial, point, x0..x{d-1}, y, center, threshold, closed, lower,
    upper, width, covered, pvalue``
``regions.csv``
    one row per (method, region): ``method, region, n_points, n_covered,
    coverage, se, mass, sparse``
``curve.csv``
    local or sliding-window coverage: ``method, x, n_points, coverage, flagged``
``summary.json``
    config, seed, version and per-method aggregates.

CSV files start with ``#`` comment lines carrying the same provenance.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from .abalone import IngestionError, load_abalone, split_sizes, three_way_split
from .bandwidth import VARIANTS, BandwidthDegenerate, solve_bandwidth
from .core import AnchorIsolated, ContractViolation, RngStream
from .evaluation import (
    RegionSpec,
    TrialReport,
    conditional_coverage,
    local_coverage_curve,
    marginal_coverage,
    sliding_window_coverage,
    width_stats,
)
from .experiments import TrialData, deviation_experiment, run_method, trial_data
from .kernels import ProductBoxKernel, parse_kernel
from .methods import MethodConfig, parse_method
from .simgen import FitDegenerate, TiltDegenerate, fit_predictor, parse_setting, sample_tilted

KERNEL_METHODS = ("base-lcp", "cal-lcp", "rlcp", "m-rlcp")
ABALONE_H = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


class UsageError(Exception):
    pass


# -- provenance and output ------------------------------------------------------------

def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _clean(v):
    """JSON-safe copy: nan becomes null, infinities become strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def config_hash(config: dict) -> str:
    blob = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


class Writer:
    """Single writer for one run directory."""

    def __init__(self, out: str, command: str, config: dict, seed: int):
        self.config = config
        self.seed = seed
        self.version = version_string()
        self.dir = Path(out) / f"{command}-{config_hash(config)}"
        self.dir.mkdir(parents=True, exist_ok=True)

    def header(self) -> list[str]:
        cfg = json.dumps(_clean(self.config), sort_keys=True)
        return [f"# config={cfg}", f"# seed={self.seed}", f"# version={self.version}"]

    def csv(self, name: str, columns: list[str], rows) -> Path:
        path = self.dir / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in self.header():
                fh.write(line + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return path

    def json(self, name: str, payload: dict) -> Path:
        doc = {"config": self.config, "seed": self.seed, "version": self.version}
        doc.update(payload)
        path = self.dir / name
        path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def point_rows(reports: list[TrialReport]):
    for rep in reports:
        cov = rep.covered
        width = rep.width
        pv = rep.pvalue if rep.pvalue is not None else np.full(len(rep), math.nan)
        for i in range(len(rep)):
            thr = float(rep.threshold[i])
            lo, hi = (rep.center[i] - thr, rep.center[i] + thr) if thr >= 0 else (math.nan, math.nan)
            yield [rep.method, rep.trial, i, *rep.X[i], rep.y[i], rep.center[i], thr, bool(rep.closed[i]),
                   lo, hi, width[i], bool(cov[i]), pv[i]]


def point_columns(d: int) -> list[str]:
    return ["method", "trial", "point", *[f"x{j}" for j in range(d)], "y", "center", "threshold", "closed",
            "lower", "upper", "width", "covered", "pvalue"]


REGION_COLUMNS = ["method", "region", "n_points", "n_covered", "coverage", "se", "mass", "sparse"]
CURVE_COLUMNS = ["method", "x", "n_points", "coverage", "flagged"]


def region_rows(label: str, table):
    for r in table:
        yield [label, r.region, r.n_points, r.n_covered, r.coverage, r.se, r.mass, r.sparse]


def curve_rows(label: str, curve):
    for j in range(curve.x.size):
        yield [label, curve.x[j], curve.n_points[j], curve.coverage[j], bool(curve.flagged[j])]


def method_summary(reports, region: RegionSpec | None) -> dict:
    marg = marginal_coverage(reports)
    out = {
        "coverage": marg.coverage,
        "se": marg.se,
        "n_points": marg.n_points,
        "trials": len(reports),
        "per_trial": [float(r.covered.mean()) for r in reports],
        "widths": dict(width_stats(reports).__dict__),
    }
    if region is not None:
        out["regions"] = {r.region: {"coverage": r.coverage, "se": r.se, "n_points": r.n_points,
                                     "sparse": r.sparse}
                          for r in conditional_coverage(reports, region)}
    return out


# -- argument handling ------------------------------------------------------------------

def _seed(args) -> int:
    env = os.environ.get("LCP_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"LCP_SEED must be an integer, got {env!r}") from None
    return int(args.seed)


def _methods(args) -> list[str]:
    items = []
    for chunk in args.method or []:
        items.extend(s for s in chunk.split(",") if s.strip())
    if not items:
        raise UsageError("at least one --method is required")
    return items


def _kernel_family(text: str | None, d: int, categorical=None):
    if text is None:
        return None
    if ":" not in text:
        text += ":h=1"
    return parse_kernel(text, d, categorical)


def _variant_for(method: str, requested: str) -> str:
    if requested != "auto":
        return requested
    return "prototype" if method in ("rlcp", "m-rlcp") else "plain"


def _fractions(text: str):
    try:
        f = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad --split {text!r}") from None
    if len(f) != 3:
        raise UsageError("--split needs three fractions")
    split_sizes(3, f)
    return f


def resolve_configs(args, d: int, pretrain_X, n: int, seed: int, categorical=None):
    """Method configs with kernels; solves for bandwidths when ``--target-neff`` is set."""
    family = _kernel_family(args.kernel, d, categorical)
    configs, bandwidths = [], {}
    for text in _methods(args):
        name = text.strip().partition(":")[0].replace("-", "").lower()
        needs = name in ("baselcp", "callcp", "rlcp", "mrlcp")
        if needs and family is None:
            raise UsageError(f"{name} needs --kernel")
        cfg = parse_method(text, alpha=args.alpha, smoothed=args.smoothed, kernel=family if needs else None)
        kernel = None
        if cfg.method in KERNEL_METHODS:
            kernel = family
            if args.target_neff is not None and family.kind != "flat":
                variant = _variant_for(cfg.method, args.variant)
                sol = solve_bandwidth(pretrain_X, family, args.target_neff, variant,
                                      RngStream(seed).child("bandwidth", cfg.label).generator(), n=n)
                kernel = family.with_bandwidth(sol.h)
                bandwidths[cfg.label] = sol.to_dict()
        configs.append(cfg.replace(kernel=kernel))
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise UsageError("duplicate methods")
    return configs, bandwidths


def _common(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="base seed (LCP_SEED overrides)")
    p.add_argument("--smoothed", action="store_true", help="randomized tie-breaking p-values")
    p.add_argument("--out", default="results", help="parent directory for run directories")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--predictor", choices=("linear", "knn"), default="linear")
    p.add_argument("--k", type=int, default=25, help="neighbours for the knn predictor")


def _sim_args(p: argparse.ArgumentParser, trials=20):
    p.add_argument("--setting", required=True, help="setting1 | setting2 | mvsin:d=20 | cube:d=10")
    p.add_argument("--noise", choices=("std", "variance"), default="std")
    p.add_argument("--n", type=int, default=2000, help="calibration size")
    p.add_argument("--n-pre", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--trials", type=int, default=trials)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlcp", description="Localized conformal prediction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic coverage experiment")
    _common(p)
    _sim_args(p)
    p.add_argument("--method", action="append", help="split|wcp|baselcp|callcp|rlcp|mrlcp:m=10 (repeatable)")
    p.add_argument("--kernel", help="gaussian:h=0.4 | box:h=1.5 | flat:lo=-3,hi=3")
    p.add_argument("--target-neff", type=float, help="solve the bandwidth for this effective sample size")
    p.add_argument("--variant", choices=("auto",) + VARIANTS, default="auto")
    p.add_argument("--region", choices=("norm-split", "axis-bins", "whole"), default="norm-split")

    p = sub.add_parser("real", help="abalone experiment")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with sex,length,diameter,height,whole_weight,rings")
    p.add_argument("--method", action="append")
    p.add_argument("--h", default=",".join(map(str, ABALONE_H)), help="comma-separated bandwidths")
    p.add_argument("--trials", type=int, default=20, help="number of random splits")
    p.add_argument("--split", default="1/3", help="pretrain,calibration,test fractions")
    p.add_argument("--standardize", action="store_true",
                   help="scale numeric kernel features by their calibration standard deviation")

    p = sub.add_parser("bandwidth", help="solve n_eff(h) = target")
    _common(p)
    p.add_argument("--setting", required=True)
    p.add_argument("--noise", choices=("std", "variance"), default="std")
    p.add_argument("--kernel", default="gaussian")
    p.add_argument("--target-neff", type=float, default=50.0)
    p.add_argument("--variant", choices=VARIANTS, default="plain")
    p.add_argument("--n-pre", type=int, default=2000)
    p.add_argument("--n", type=int, help="calibration size used in n_eff (default: n-pre)")
    p.add_argument("--repetitions", type=int, default=5)

    p = sub.add_parser("deviation", help="RLCP width variability over prototype redraws")
    _common(p)
    p.add_argument("--setting", default="setting1")
    p.add_argument("--noise", choices=("std", "variance"), default="std")
    p.add_argument("--kernel", default="gaussian")
    p.add_argument("--h", default="0.1,0.2,0.4,0.8,1.6")
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--redraws", type=int, default=100)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--n-pre", type=int, default=2000)

    p = sub.add_parser("shift", help="coverage under a tilted test distribution")
    _common(p)
    _sim_args(p)
    p.add_argument("--method", action="append")
    p.add_argument("--kernel")
    p.add_argument("--target-neff", type=float)
    p.add_argument("--variant", choices=("auto",) + VARIANTS, default="auto")
    p.add_argument("--tilt", default="phi", help="phi | const | ball:r=1.0[,c=0/0/...]")
    return parser


# -- simulate ---------------------------------------------------------------------------

def _sim_trial(job):
    spec, configs, seed, t, n_pre, n_cal, n_test, predictor, k, tilt = job
    base = RngStream(seed)
    sampler = None
    if tilt is not None:
        g, bound = tilt_function(tilt, spec.d)
        sampler = lambda n, gen: sample_tilted(spec, g, bound, n, gen)
    data = trial_data(spec, base, t, n_pre, n_cal, n_test, predictor, sampler, k)
    return [run_method(cfg, data, base, t) for cfg in configs]


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _simulation_config(args, seed) -> dict:
    return {
        "command": args.command, "setting": args.setting, "noise": args.noise, "methods": _methods(args),
        "kernel": args.kernel, "target_neff": args.target_neff, "variant": args.variant,
        "alpha": args.alpha, "smoothed": args.smoothed, "n": args.n, "n_pre": args.n_pre,
        "n_test": args.n_test, "trials": args.trials, "predictor": args.predictor, "k": args.k,
        "seed": seed,
    }


def _check_sizes(args):
    for name in ("n", "n_pre", "n_test", "trials"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.workers < 1:
        raise UsageError("--workers must be positive")


def _run_simulation(args, seed, config, tilt=None):
    spec = parse_setting(args.setting, args.noise)
    _check_sizes(args)
    pre0 = trial_data(spec, RngStream(seed), 0, args.n_pre, 1, 1, args.predictor, k=args.k).pretrain
    configs, bandwidths = resolve_configs(args, spec.d, pre0.features, args.n, seed)
    jobs = [(spec, configs, seed, t, args.n_pre, args.n, args.n_test, args.predictor, args.k, tilt)
            for t in range(args.trials)]
    per_trial = _map(_sim_trial, jobs, args.workers)
    reports = {c.label: [trial[j] for trial in per_trial] for j, c in enumerate(configs)}
    return spec, configs, bandwidths, reports


def cmd_simulate(args) -> int:
    seed = _seed(args)
    config = _simulation_config(args, seed)
    config["region"] = args.region
    spec, configs, bandwidths, reports = _run_simulation(args, seed, config)
    region = {"norm-split": RegionSpec.norm_split(spec.d), "whole": RegionSpec.whole(),
              "axis-bins": RegionSpec.axis_bins(tuple(range(min(3, spec.d))))}[args.region]
    w = Writer(args.out, "simulate", config, seed)
    all_reports = [r for c in configs for r in reports[c.label]]
    w.csv("points.csv", point_columns(spec.d), point_rows(all_reports))
    w.csv("regions.csv", REGION_COLUMNS,
          (row for c in configs for row in region_rows(c.label, conditional_coverage(reports[c.label], region))))
    if spec.d == 1:
        w.csv("curve.csv", CURVE_COLUMNS,
              (row for c in configs for row in curve_rows(c.label, local_coverage_curve(reports[c.label]))))
    methods = {}
    for c in configs:
        methods[c.label] = method_summary(reports[c.label], region)
        methods[c.label]["kernel"] = c.kernel.spec if c.kernel is not None else None
        methods[c.label]["bandwidth"] = bandwidths.get(c.label)
    path = w.json("summary.json", {"setting": spec.label, "methods": methods})
    for c in configs:
        m = methods[c.label]
        print(f"{c.label}: coverage {m['coverage']:.4f} (se {m['se']:.4f}), median width {m['widths']['median']:.4g}")
    print(path.parent)
    return 0


# -- shift ------------------------------------------------------------------------------

def tilt_function(text: str, d: int):
    """``(g, bound)`` for ``phi`` (Phi of the first coordinate), ``const``, or ``ball:r=,c=``."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = val.strip()
    if kind == "phi":
        return (lambda X: norm.cdf(X[:, 0])), 1.0
    if kind == "const":
        return (lambda X: np.ones(X.shape[0])), 1.0
    if kind == "ball":
        r = float(params.get("r", 1.0))
        c = np.array([float(v) for v in params["c"].split("/")]) if "c" in params else np.zeros(d)
        if c.size != d:
            raise UsageError(f"ball center needs {d} coordinates")
        return (lambda X: (np.linalg.norm(X - c, axis=1) <= r).astype(float)), 1.0
    raise UsageError(f"unknown tilt {text!r}")


def cmd_shift(args) -> int:
    seed = _seed(args)
    config = _simulation_config(args, seed)
    config["tilt"] = args.tilt
    spec = parse_setting(args.setting, args.noise)
    tilt_function(args.tilt, spec.d)
    _, configs, bandwidths, shifted = _run_simulation(args, seed, config, tilt=args.tilt)
    w = Writer(args.out, "shift", config, seed)
    all_reports = [r for c in configs for r in shifted[c.label]]
    w.csv("points.csv", point_columns(spec.d), point_rows(all_reports))
    methods = {}
    for c in configs:
        methods[c.label] = method_summary(shifted[c.label], None)
        methods[c.label]["kernel"] = c.kernel.spec if c.kernel is not None else None
        methods[c.label]["bandwidth"] = bandwidths.get(c.label)
    if args.tilt.startswith("ball"):
        # untilted run: coverage conditional on the same set, for comparison
        _, _, _, plain = _run_simulation(args, seed, config)
        g, _ = tilt_function(args.tilt, spec.d)
        for c in configs:
            inside = [g(r.X) > 0 for r in plain[c.label]]
            est = marginal_coverage(plain[c.label], inside)
            methods[c.label]["set_conditional"] = {"coverage": est.coverage, "se": est.se,
                                                   "n_points": est.n_points}
    path = w.json("summary.json", {"setting": spec.label, "tilt": args.tilt, "methods": methods})
    for c in configs:
        m = methods[c.label]
        print(f"{c.label}: shifted coverage {m['coverage']:.4f} (se {m['se']:.4f})")
    print(path.parent)
    return 0


# -- bandwidth --------------------------------------------------------------------------

def cmd_bandwidth(args) -> int:
    seed = _seed(args)
    spec = parse_setting(args.setting, args.noise)
    if args.n_pre < 2:
        raise UsageError("--n-pre must be at least 2")
    n = args.n if args.n is not None else args.n_pre
    config = {"command": "bandwidth", "setting": spec.label, "kernel": args.kernel,
              "target_neff": args.target_neff, "variant": args.variant, "n_pre": args.n_pre, "n": n,
              "repetitions": args.repetitions, "seed": seed}
    base = RngStream(seed)
    pre = trial_data(spec, base, 0, args.n_pre, 1, 1).pretrain
    family = _kernel_family(args.kernel, spec.d)
    sol = solve_bandwidth(pre.features, family, args.target_neff, args.variant,
                          base.child("bandwidth").generator(), n=n, repetitions=args.repetitions)
    w = Writer(args.out, "bandwidth", config, seed)
    path = w.json("bandwidth.json", {"solution": sol.to_dict()})
    print(f"h = {sol.h!r}  n_eff = {sol.n_eff:.3f}{'  (saturated)' if sol.saturated else ''}")
    print(path)
    return 0


# -- deviation --------------------------------------------------------------------------

def _floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {flag} {text!r}") from None
    if not vals:
        raise UsageError(f"{flag} is empty")
    return vals


def cmd_deviation(args) -> int:
    seed = _seed(args)
    spec = parse_setting(args.setting, args.noise)
    hs = _floats(args.h, "--h")
    if min(args.draws, args.points, args.n, args.n_pre) < 1 or args.redraws < 30:
        raise UsageError("sizes must be positive and --redraws at least 30")
    config = {"command": "deviation", "setting": spec.label, "kernel": args.kernel, "h": hs,
              "draws": args.draws, "points": args.points, "redraws": args.redraws, "n": args.n,
              "n_pre": args.n_pre, "alpha": args.alpha, "smoothed": args.smoothed, "seed": seed}
    family = _kernel_family(args.kernel, spec.d)
    rows, table = [], {}
    for h in hs:
        D, excluded, per = deviation_experiment(spec, family.with_bandwidth(h), args.draws, args.points,
                                                args.redraws, seed, args.n_pre, args.n, args.alpha,
                                                args.smoothed)
        table[repr(h)] = {"D": D, "excluded": excluded, "per_draw": per}
        rows.append([h, D, excluded])
        print(f"h={h}: D={D:.4f} (excluded {excluded})")
    w = Writer(args.out, "deviation", config, seed)
    w.csv("deviation.csv", ["h", "D", "excluded"], rows)
    print(w.json("summary.json", {"deviation": table}).parent)
    return 0


# -- real data --------------------------------------------------------------------------

def _abalone_kernel(h: float, data, cal, standardize: bool) -> ProductBoxKernel:
    scale = np.ones(data.d)
    if standardize:
        sd = cal.features.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
    bw = tuple(float(h * scale[j]) if not c else float(h) for j, c in enumerate(data.categorical))
    return ProductBoxKernel(bw, data.categorical)


def _real_split(job):
    data, configs, hs, seed, t, fractions, predictor, k, standardize = job
    base = RngStream(seed)
    pre, cal, test = three_way_split(data, base.child(t, "split").generator(), fractions)
    sf = fit_predictor(predictor, pre, k)
    td = TrialData(pre, cal, test, sf)
    out = []
    for h in hs:
        kernel = _abalone_kernel(h, data, cal, standardize)
        for cfg in configs:
            if cfg.method not in KERNEL_METHODS and h != hs[0]:
                continue
            c = cfg.replace(kernel=kernel if cfg.method in KERNEL_METHODS else None)
            rep = run_method(c, td, base.child("h", repr(h)), t)
            rep.method = f"{c.label}@h={h!r}" if cfg.method in KERNEL_METHODS else c.label
            out.append(rep)
    return out


def cmd_real(args) -> int:
    seed = _seed(args)
    fractions = (1 / 3, 1 / 3, 1 / 3) if args.split == "1/3" else _fractions(args.split)
    hs = _floats(args.h, "--h")
    if args.trials < 1 or args.workers < 1:
        raise UsageError("--trials and --workers must be positive")
    data = load_abalone(args.data)
    methods = _methods(args)
    configs = [parse_method(m, args.alpha, smoothed=args.smoothed,
                            kernel=ProductBoxKernel((1.0,) * data.d, data.categorical)) for m in methods]
    config = {"command": "real", "data": str(Path(args.data).name), "rows": data.n, "methods": methods,
              "h": hs, "alpha": args.alpha, "smoothed": args.smoothed, "trials": args.trials,
              "split": list(fractions), "split_sizes": split_sizes(data.n, fractions),
              "predictor": args.predictor, "k": args.k, "standardize": args.standardize, "seed": seed}
    jobs = [(data, configs, hs, seed, t, fractions, args.predictor, args.k, args.standardize)
            for t in range(args.trials)]
    per_split = _map(_real_split, jobs, args.workers)
    labels = [r.method for r in per_split[0]]
    reports = {lab: [split[j] for split in per_split] for j, lab in enumerate(labels)}
    sex = RegionSpec.category(0, data.levels[0])
    length = data.names.index("length")
    w = Writer(args.out, "real", config, seed)
    all_reports = [r for lab in labels for r in reports[lab]]
    cols = ["method", "trial", "point", *data.names, "y", "center", "threshold", "closed",
            "lower", "upper", "width", "covered", "pvalue"]
    w.csv("points.csv", cols, point_rows(all_reports))
    w.csv("regions.csv", REGION_COLUMNS,
          (row for lab in labels for row in region_rows(lab, conditional_coverage(reports[lab], sex))))
    w.csv("curve.csv", CURVE_COLUMNS,
          (row for lab in labels for row in curve_rows(lab, sliding_window_coverage(reports[lab], length))))
    summary = {lab: method_summary(reports[lab], sex) for lab in labels}
    path = w.json("summary.json", {
        "methods": summary,
        "kernel_features": "standardized by calibration std" if args.standardize else "raw",
    })
    for lab in labels:
        print(f"{lab}: coverage {summary[lab]['coverage']:.4f} (se {summary[lab]['se']:.4f})")
    print(path.parent)
    return 0


COMMANDS = {"simulate": cmd_simulate, "real": cmd_real, "bandwidth": cmd_bandwidth,
            "deviation": cmd_deviation, "shift": cmd_shift}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ContractViolation) as err:
        print(f"rlcp {args.command}: error: {err}", file=sys.stderr)
        return 2
    except IngestionError as err:
        print(f"rlcp {args.command}: ingestion error: {err}", file=sys.stderr)
        return 3
    except (BandwidthDegenerate, AnchorIsolated, FitDegenerate, TiltDegenerate) as err:
        print(f"rlcp {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
