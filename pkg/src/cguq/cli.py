"""Command-line interface: ``cguq simulate|fit|ci|validate|export``.

Every stochastic command takes ``--seed``; when it is missing a fresh seed is
drawn, printed to stderr and recorded in the output metadata. ``--config``
reads a YAML file whose keys are option names (dashes or underscores), either
flat or nested by command and subcommand; explicit flags win over file values.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import warnings
from typing import Optional

import numpy as np

from . import __version__
from .core import BasisSet, ConfidenceReport, design_matrix
from .exceptions import (
    ArgumentError,
    CguqError,
    ConfigurationError,
    DomainError,
    ShortSeriesWarning,
    UnsupportedBasisError,
)

log = logging.getLogger("cguq")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
USAGE_ERRORS = (ArgumentError, ConfigurationError, DomainError, UnsupportedBasisError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Parser


def _grid(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like lo:hi:n, got {text!r}") from None
    if not hi > lo or n < 2:
        raise argparse.ArgumentTypeError("grid needs lo < hi and n >= 2")
    return text


def _common(stochastic=True):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML experiment config; flags override its values")
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    if stochastic:
        p.add_argument("--seed", type=int, help="master seed (generated and printed when missing)")
    p.add_argument("--out", help="output file")
    return p


def _basis_args(p, pair=False):
    p.add_argument("--basis", help="basis JSON {kind, K, domain, knots}; overrides --K")
    if pair:
        p.add_argument("--K", type=int, default=30, help="number of cubic B-splines")
        p.add_argument("--r-min", type=float, default=0.35)
        p.add_argument("--cutoff", type=float, default=1.4)
    else:
        p.add_argument("--K", type=int, default=5, help="number of monomials 1, x, ..., x^(K-1)")


ESTIMATORS = ("fm", "re", "rer", "fm-ts", "pairfm")


def build_parser():
    parser = argparse.ArgumentParser(prog="cguq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cguq {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    sim = sub.add_parser("simulate", help="generate synthetic datasets").add_subparsers(dest="target", required=True)
    p = sim.add_parser("twoscale", parents=[_common()], help="two-scale diffusion samples")
    p.add_argument("--n", type=int, default=500, help="number of i.i.d. samples")
    p.add_argument("--n-t", type=int, help="record time series of this many states instead of i.i.d. samples")
    p.add_argument("--paths", type=int, default=1, help="number of independent paths (with --n-t)")
    p.add_argument("--eps", type=float, default=0.005)
    p.add_argument("--burn-in", type=float, default=100.0, help="burn-in time")
    p.add_argument("--stride-time", type=float, default=5.0, help="time between i.i.d. samples")
    leaves[("simulate", "twoscale")] = p
    p = sim.add_parser("pairs", parents=[_common()], help="Monte Carlo particle configurations")
    _basis_args(p, pair=True)
    p.add_argument("--configs", type=int, default=200)
    p.add_argument("--m", type=int, default=125)
    p.add_argument("--box", type=float, help="box edge (default from reduced density 0.7)")
    p.add_argument("--kt", type=float, default=1.0)
    p.add_argument("--force-noise", type=float, default=1.0)
    leaves[("simulate", "pairs")] = p

    fit = sub.add_parser("fit", help="fit CG parameters").add_subparsers(dest="target", required=True)
    for name in ESTIMATORS:
        p = fit.add_parser(name, parents=[_common()], help=f"{name} estimator")
        p.add_argument("--data", help="dataset CSV (trajectory CSV for pairfm)")
        _basis_args(p, pair=name == "pairfm")
        if name == "re":
            p.add_argument("--max-iter", type=int, default=50)
        if name == "pairfm":
            p.add_argument("--potential-csv", help="also write r,u of the fitted potential")
        leaves[("fit", name)] = p

    p = sub.add_parser("ci", parents=[_common()], help="confidence intervals")
    p.add_argument("--estimator", choices=ESTIMATORS, default="fm")
    p.add_argument("--method", default="all",
                   choices=("asymptotic", "jackknife", "bootstrap", "bootstrap-standard", "bootstrap-percentile", "all"))
    p.add_argument("--data")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--batch-size", type=int, help="batch length for path-space batch means")
    p.add_argument("--json", help="also write the reports as JSON")
    p.add_argument("--band-csv", help="bootstrap percentile band of the drift (or pair potential)")
    p.add_argument("--std-csv", help="pairfm only: pointwise bootstrap and jackknife STD curves")
    p.add_argument("--grid", type=_grid, help="band grid lo:hi:n")
    p.add_argument("--basis", help="basis JSON; overrides --K")
    p.add_argument("--K", type=int, help="basis size (5 monomials, or 30 splines for pairfm)")
    p.add_argument("--r-min", type=float, default=0.35)
    p.add_argument("--cutoff", type=float, default=1.4)
    leaves[("ci", None)] = p

    val = sub.add_parser("validate", help="coverage and method comparison").add_subparsers(dest="target", required=True)
    p = val.add_parser("coverage", parents=[_common()], help="Monte Carlo CI coverage")
    p.add_argument("--estimator", choices=("fm", "re", "rer"), default="fm")
    p.add_argument("--ci", choices=("asymptotic", "jackknife", "bootstrap-standard", "bootstrap-percentile"),
                   default="asymptotic")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--eps", type=float, default=0.005)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--batch-size", type=int)
    leaves[("validate", "coverage")] = p
    p = val.add_parser("compare", parents=[_common()], help="FM / RE / RER side by side")
    p.add_argument("--methods", nargs="+", choices=("fm", "re", "rer"), default=["fm", "re", "rer"])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--n-t", type=int, default=50000)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--eps", type=float, default=0.005)
    p.add_argument("--alpha", type=float, default=0.05)
    leaves[("validate", "compare")] = p

    ex = sub.add_parser("export", help="plot-ready curves").add_subparsers(dest="target", required=True)
    p = ex.add_parser("density", parents=[_common(False)], help="CG invariant density of a fitted drift")
    p.add_argument("--estimate", help="estimate JSON")
    p.add_argument("--grid", type=_grid, default="-8:8:4001")
    p.add_argument("--strict", action="store_true", help="require decay to 1e-12 of the peak at the grid ends")
    leaves[("export", "density")] = p
    p = ex.add_parser("drift", parents=[_common(False)], help="fitted drift a(x)")
    p.add_argument("--estimate")
    p.add_argument("--grid", type=_grid, default="-3:3:121")
    leaves[("export", "drift")] = p
    p = ex.add_parser("potential", parents=[_common()], help="fitted pair potential u(r), optional band")
    p.add_argument("--estimate")
    p.add_argument("--data", help="trajectory CSV; adds a bootstrap band")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", type=_grid)
    leaves[("export", "potential")] = p
    return parser, leaves


# ---------------------------------------------------------------------------
# Config handling


_SKIP = {"help", "config", "version"}


def config_schema(leaf: argparse.ArgumentParser) -> dict:
    """JSON schema of the flat option mapping accepted by one subcommand."""
    props = {}
    for a in leaf._actions:
        if a.dest in _SKIP or not a.option_strings:
            continue
        if isinstance(a, argparse._StoreTrueAction):
            s = {"type": "boolean"}
        elif a.type is int:
            s = {"type": "integer"}
        elif a.type is float:
            s = {"type": "number"}
        else:
            s = {"type": "string"}
        if a.choices:
            s["enum"] = list(a.choices)
        if a.nargs in ("+", "*"):
            s = {"type": "array", "items": s, "minItems": 1}
        props[a.dest] = s
    return {"type": "object", "properties": props, "additionalProperties": False}


def _norm_keys(d):
    return {str(k).replace("-", "_"): v for k, v in d.items()}


def load_config(path, command, target, leaf) -> dict:
    import jsonschema
    import yaml

    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping of option names to values")
    flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    section = raw.get(command)
    if isinstance(section, dict):
        flat.update({k: v for k, v in section.items() if not isinstance(v, dict)})
        if target is not None and isinstance(section.get(target), dict):
            flat.update(section[target])
    flat = _norm_keys(flat)
    try:
        jsonschema.validate(flat, config_schema(leaf))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config {path}: {where}: {exc.message}") from None
    return flat


def _git_describe():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True, text=True,
                             timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


_NOT_HASHED = ("threads", "config", "verbose", "out", "json", "band_csv", "std_csv", "potential_csv")


def _effective(args) -> dict:
    """Options that determine the numbers; output paths and worker count are excluded."""
    d = {k: v for k, v in vars(args).items() if k not in _NOT_HASHED}
    return {k: d[k] for k in sorted(d)}


_INPUT_FILES = ("data", "basis", "estimate")


def _file_digest(path):
    try:
        with open(path, "rb") as fh:
            return "sha256:" + hashlib.sha256(fh.read()).hexdigest()
    except OSError:
        return str(path)


def config_hash(args) -> str:
    """Hash of the effective options; input files enter by content, not by path."""
    eff = _effective(args)
    for k in _INPUT_FILES:
        if eff.get(k):
            eff[k] = _file_digest(eff[k])
    blob = json.dumps(eff, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Per-invocation context: resolved args, seed and output metadata."""

    def __init__(self, args):
        self.args = args
        self.threads = int(args.threads or 1)
        if self.threads < 1:
            raise UsageError("--threads must be >= 1")
        self.meta = {"config": config_hash(args), "version": __version__}
        if getattr(args, "seed", None) is not None:
            self.meta["seed"] = args.seed

    def sidecar(self, path, extra=None):
        from .io import write_json

        d = dict(self.meta)
        d["git"] = _git_describe()
        d["params"] = _effective(self.args)
        if extra:
            d.update(extra)
        write_json(path + ".meta.json", d)


def _resolve_seed(args):
    if hasattr(args, "seed") and args.seed is None:
        from .seeding import fresh_seed

        args.seed = fresh_seed()
        print(f"seed: {args.seed}", file=sys.stderr)


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _grid_array(text):
    lo, hi, n = text.split(":")
    return np.linspace(float(lo), float(hi), int(n))


# ---------------------------------------------------------------------------
# Commands


def _basis(args, pair=False):
    from .io import read_basis_json

    if getattr(args, "basis", None):
        return read_basis_json(args.basis)
    if pair:
        K = args.K if args.K is not None else 30
        return BasisSet.bspline(K, (args.r_min, args.cutoff), degree=3)
    return BasisSet.monomial(args.K if args.K is not None else 5)


def cmd_simulate(run: Run):
    from . import io
    from .twoscale import TwoScaleParams, generate_paths, sample_iid

    a = run.args
    _need(a, "out")
    if a.target == "twoscale":
        params = TwoScaleParams(epsilon=a.eps, seed=a.seed)
        if a.n_t is not None:
            data = generate_paths(params, a.paths, a.n_t, burn_in_time=a.burn_in, threads=run.threads)
            io.write_ts_csv(a.out, data, run.meta)
            print(f"wrote {a.paths} path(s) x {a.n_t} states to {a.out}")
        else:
            data = sample_iid(params, a.n, stride_time=a.stride_time, burn_in_time=a.burn_in)
            io.write_iid_csv(a.out, data, run.meta)
            print(f"wrote {a.n} i.i.d. samples to {a.out}")
        run.sidecar(a.out)
        return EXIT_OK
    from .pairfm import generator_theta, synth_pair_data

    basis = _basis(a, pair=True)
    theta = generator_theta(basis)
    configs = synth_pair_data(theta, basis, m=a.m, box_length=a.box, n_configs=a.configs, temperature_like=a.kt,
                              seed=a.seed, cutoff=a.cutoff, force_noise=a.force_noise, threads=run.threads)
    io.write_pair_trajectory(a.out, configs, run.meta)
    run.sidecar(a.out, {"generator_theta": [float(v) for v in theta], "basis": basis.to_dict()})
    print(f"wrote {len(configs)} configurations of {a.m} particles to {a.out}")
    return EXIT_OK


def _load_data(estimator, path):
    from . import io
    from .core import IidDataset, TimeSeriesDataset

    if estimator == "pairfm":
        return io.read_pair_trajectory(path)
    data = io.read_dataset(path)
    want = TimeSeriesDataset if estimator in ("rer", "fm-ts") else IidDataset
    if not isinstance(data, want):
        raise UsageError(f"estimator {estimator} needs {'a time-series' if want is TimeSeriesDataset else 'an i.i.d.'} "
                         f"dataset; {path} is not one")
    return data


def _fitter(estimator, basis, args, model=None):
    from .estimators import GibbsModel, NewtonOptions, fit_fm_iid, fit_fm_ts, fit_re_iid, fit_rer
    from .pairfm import fit_pair_potential

    if estimator == "fm":
        return lambda d: fit_fm_iid(d, basis)
    if estimator == "re":
        model = model or GibbsModel(basis)
        opts = NewtonOptions(max_iter=getattr(args, "max_iter", 50) or 50)
        return lambda d: fit_re_iid(d, basis, opts, model=model)
    if estimator == "rer":
        return lambda d: fit_rer(d, basis)
    if estimator == "fm-ts":
        return lambda d: fit_fm_ts(d, basis)
    if estimator == "pairfm":
        return lambda d: fit_pair_potential(d, basis, args.cutoff)
    raise UsageError(f"unknown estimator {estimator!r}")


def cmd_fit(run: Run):
    from . import io

    a = run.args
    _need(a, "data", "out")
    est_name = a.target
    basis = _basis(a, pair=est_name == "pairfm")
    data = _load_data(est_name, a.data)
    est = _fitter(est_name, basis, a)(data)
    est = type(est)(est.theta, est.method, est.n_samples, a.seed, est.converged, est.basis, est.info)
    if not est.converged:
        print(f"error: {est.method} did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    io.write_estimate_json(a.out, est, run.meta)
    run.sidecar(a.out)
    if est_name == "pairfm" and a.potential_csv:
        from .pairfm import pair_potential

        r = np.linspace(basis.domain[0], basis.domain[1], 200)
        io.write_potential_csv(a.potential_csv, r, pair_potential(basis, est.theta, r), meta=run.meta)
    print("theta = " + " ".join(f"{v:.4f}" for v in est.theta))
    return EXIT_OK


def _asymptotic(estimator, est, data, basis, alpha, batch_size, model):
    from .uq import (batch_means_sigma, fisher_i1_ts, fisher_pair_fm, fisher_pair_iid, sandwich_ci_iid,
                     sandwich_ci_ts)

    if estimator == "fm":
        return sandwich_ci_iid(est.theta, fisher_pair_fm(est.theta, data, basis), len(data), alpha)
    if estimator == "re":
        return sandwich_ci_iid(est.theta, fisher_pair_iid(est.theta, data, model), len(data), alpha)
    if estimator == "rer":
        if data.n_paths != 1:
            raise ArgumentError("the asymptotic path-space interval needs exactly one stationary path")
        i1 = fisher_i1_ts(est.theta, data, basis)
        sigma = batch_means_sigma(est.theta, data, basis, batch_size)
        return sandwich_ci_ts(est.theta, i1, sigma, data.n_states - 1, alpha)
    raise ArgumentError(f"no asymptotic interval for {estimator}; use jackknife or bootstrap")


def cmd_ci(run: Run):
    from . import io
    from .estimators import GibbsModel
    from .uq import bootstrap, bootstrap_percentile_ci, bootstrap_standard_ci, jackknife, qoi_bootstrap_ci

    a = run.args
    _need(a, "data", "out")
    pair = a.estimator == "pairfm"
    basis = _basis(a, pair=pair)
    data = _load_data(a.estimator, a.data)
    model = GibbsModel(basis) if a.estimator == "re" else None
    if pair:
        from .pairfm import pair_blocks

        data = pair_blocks(data, basis, a.cutoff, run.threads)
    fit = _fitter(a.estimator, basis, a, model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortSeriesWarning)
        est = fit(data)
    if not est.converged:
        print(f"error: {est.method} did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    methods = {
        "all": ["asymptotic", "jackknife", "bootstrap-standard", "bootstrap-percentile"],
        "bootstrap": ["bootstrap-standard", "bootstrap-percentile"],
    }.get(a.method, [a.method])
    if a.method == "all" and (a.estimator in ("fm-ts", "pairfm")):
        methods.remove("asymptotic")
    if a.estimator == "rer" and data.n_paths == 1 and a.method == "all":
        methods = ["asymptotic"]
    reports, reps = [], None
    for m in methods:
        if m == "asymptotic":
            reports.append(_asymptotic(a.estimator, est, data, basis, a.alpha, a.batch_size, model))
        elif m == "jackknife":
            reports.append(jackknife(data, fit, a.alpha, est.theta, run.threads)[1])
        else:
            if reps is None:
                reps = bootstrap(data, fit, a.B, a.seed, run.threads)
            reports.append(bootstrap_standard_ci(est.theta, reps, a.alpha) if m == "bootstrap-standard"
                           else bootstrap_percentile_ci(reps, a.alpha, est.theta))
    io.write_reports_csv(a.out, reports, run.meta)
    if a.json:
        io.write_json(a.json, {"meta": run.meta, "estimate": est.to_dict(), "reports": [r.to_dict() for r in reports]})
    if a.band_csv or a.std_csv:
        if pair:
            from .pairfm import potential_band

            grid = _grid_array(a.grid) if a.grid else None
            band = potential_band(data, basis, a.cutoff, a.B, a.alpha, grid, a.seed, run.threads,
                                  jackknife=bool(a.std_csv))
            if a.band_csv:
                io.write_potential_csv(a.band_csv, band.grid, band.estimate, band.report.lower, band.report.upper,
                                       run.meta)
            if a.std_csv:
                io.write_xy_csv(a.std_csv, ["r", "bootstrap_std", "jackknife_std"],
                                [band.grid, band.bootstrap_std, band.jackknife_std], run.meta)
        else:
            if a.std_csv:
                raise UsageError("--std-csv is only defined for pairfm")
            if reps is None:
                reps = bootstrap(data, fit, a.B, a.seed, run.threads)
            grid = _grid_array(a.grid or "-2:2:81")
            Phi = design_matrix(basis, grid)
            band = qoi_bootstrap_ci(reps, lambda th: Phi @ th, a.alpha, grid, est.theta)
            io.write_band_csv(a.band_csv, band, run.meta)
    run.sidecar(a.out)
    sys.stdout.write(io.comparison_table(reports))
    return EXIT_OK


def cmd_validate(run: Run):
    from . import io
    from .validate import coverage_experiment, method_comparison

    a = run.args
    _need(a, "out")
    if a.target == "coverage":
        res = coverage_experiment(a.estimator, a.ci, a.n, a.alpha, a.trials, None, a.seed, run.threads, a.K, a.eps,
                                  a.B, a.batch_size)
        d = res.to_dict()
        d["meta"] = run.meta
        io.write_json(a.out, d)
        print(f"{res.method} n={res.n} level={1 - res.alpha:.4f}: mean coverage {res.mean_coverage:.4f} "
              f"(per parameter: {' '.join(f'{c:.4f}' for c in res.per_param_coverage)})")
    else:
        rows = method_comparison({"seed": a.seed, "methods": a.methods, "n": a.n, "n_t": a.n_t, "K": a.K,
                                  "epsilon": a.eps, "alpha": a.alpha})
        io.write_json(a.out, {"meta": run.meta, "rows": rows})
        for r in rows:
            print(f"{r['method']:>7}  theta_2={r['theta'][1]:.4f}  var={r['variance'][1]:.4f}  "
                  f"CI=[{r['lower'][1]:.4f}, {r['upper'][1]:.4f}]  time={r['wall_time']:.4f}s")
    run.sidecar(a.out)
    return EXIT_OK


def cmd_export(run: Run):
    from . import io

    a = run.args
    _need(a, "estimate", "out")
    est = io.read_estimate_json(a.estimate)
    basis = est.basis or BasisSet.monomial(est.theta.size)
    if a.target == "density":
        from .estimators import GibbsModel
        from .twoscale import cg_invariant_density, log_boltzmann_weights

        xs = _grid_array(a.grid)
        if a.strict:
            dens = cg_invariant_density(est.theta, xs, basis).values
        else:
            model = GibbsModel(basis)
            _, dens, _ = log_boltzmann_weights(-2.0 * model.features(xs) @ est.theta, xs, None)
        io.write_density_csv(a.out, xs, dens, run.meta)
    elif a.target == "drift":
        xs = _grid_array(a.grid)
        io.write_xy_csv(a.out, ["x", "drift"], [xs, design_matrix(basis, xs) @ est.theta], run.meta)
    else:
        from .pairfm import pair_potential, potential_band

        if not basis.is_spline:
            raise UsageError("potential export needs a pair-potential estimate")
        grid = _grid_array(a.grid) if a.grid else np.linspace(basis.domain[0], basis.domain[1], 200)
        if a.data:
            _resolve_seed(a)
            run.meta["seed"] = a.seed
            configs = io.read_pair_trajectory(a.data)
            band = potential_band(configs, basis, basis.domain[1], a.B, a.alpha, grid, a.seed, run.threads,
                                  jackknife=False)
            io.write_potential_csv(a.out, grid, band.estimate, band.report.lower, band.report.upper, run.meta)
        else:
            io.write_potential_csv(a.out, grid, pair_potential(basis, est.theta, grid), meta=run.meta)
    run.sidecar(a.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "ci": cmd_ci, "validate": cmd_validate, "export": cmd_export}


def _glue_grids(argv):
    """Join ``--grid lo:hi:n`` into one token so a negative ``lo`` is not read as a flag."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: Optional[list] = None) -> int:
    parser, leaves = build_parser()
    argv = _glue_grids(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors by exiting
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    target = getattr(args, "target", None)
    try:
        if getattr(args, "config", None):
            leaf = leaves[(args.command, target)]
            leaf.set_defaults(**load_config(args.config, args.command, target, leaf))
            try:
                args = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        if args.command in ("simulate", "ci", "validate"):
            _resolve_seed(args)
        return COMMANDS[args.command](Run(args))
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CguqError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
