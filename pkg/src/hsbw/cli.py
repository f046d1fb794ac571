"""Command-line entry point: ``hsbw <command> ...``.

Exit codes: 0 success, 2 schema or domain error, 3 infeasible constraints,
4 numerical failure, 5 I/O failure.  The log level is read from the
``HSBW_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

from . import io
from .balancing import (
    TIERS,
    AugmentationSpec,
    EstimatorConfig,
    FitResult,
    ToleranceSpec,
    assemble_problem,
    balance_table,
    fit,
    ridge_augment,
    solve_weights,
    state_weight_summary,
)
from .calibration import calibrate, replicate_noise_covariance
from .errors import DomainError, HSBWError, InfeasibleError, SchemaError
from .inference import estimate_effect, placebo_validation
from .simulation import SimConfig, expand_grid, run_study

logger = logging.getLogger("hsbw")

ADJUSTMENTS = ("none", "homogeneous", "heterogeneous", "correlated")


# ----------------------------------------------------------------------
# argument helpers


def _float(text):
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def parse_tolerances(tol: str | None, tiers=()) -> ToleranceSpec:
    """``"0.5"`` or ``"x1=0.1,x2=inf,default=0.5"`` plus ``name=tier`` pairs."""
    values, default = {}, 0.0
    if tol:
        for part in tol.split(","):
            part = part.strip()
            if "=" in part:
                k, v = (s.strip() for s in part.split("=", 1))
                if k == "default":
                    default = float(v)
                else:
                    values[k] = float(v)
            else:
                default = float(part)
    tier_map = {}
    for item in tiers or ():
        for part in item.split(","):
            k, _, t = part.partition("=")
            if t.strip() not in TIERS:
                raise DomainError(f"unknown tier {t!r}; choose from {sorted(TIERS)}")
            tier_map[k.strip()] = t.strip()
    return ToleranceSpec(values, tier_map, default)


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def read_grid(path) -> tuple[SimConfig, dict]:
    """Parse a ``key = value`` grid file; lists are comma separated.

    Recognized keys: ``tau``, ``rho_x``, ``size_model`` (lists), ``inputs``,
    ``rhos``, ``n_sims``, ``m1``, ``M1``, ``seed``, ``rho_star``,
    ``jackknife``.  Lines starting with ``#`` are ignored.
    """
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            raw[k] = v
    known = {"tau", "rho_x", "size_model", "inputs", "rhos", "n_sims", "m1", "M1", "seed",
             "rho_star", "jackknife"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise SchemaError(f"{path}: unknown grid keys {unknown}")
    kw = {}
    if "inputs" in raw:
        kw["inputs"] = tuple(s.strip() for s in raw["inputs"].split(","))
    if "rhos" in raw:
        kw["rhos"] = tuple(_float_list(raw["rhos"]))
    for key in ("n_sims", "m1", "M1"):
        if key in raw:
            kw[key] = int(raw[key])
    if "seed" in raw:
        kw["base_seed"] = int(raw["seed"])
    if "rho_star" in raw:
        kw["rho_star"] = float(raw["rho_star"])
    if "jackknife" in raw:
        kw["jackknife"] = raw["jackknife"].lower() in ("1", "true", "yes", "on")
    axes = {
        "taus": _float_list(raw["tau"]) if "tau" in raw else None,
        "rho_xs": _float_list(raw["rho_x"]) if "rho_x" in raw else None,
        "size_models": [s.strip() for s in raw["size_model"].split(",")] if "size_model" in raw else None,
    }
    first = {
        "tau": (axes["taus"] or [SimConfig.tau])[0],
        "rho_x": (axes["rho_xs"] or [SimConfig.rho_x])[0],
        "size_model": (axes["size_models"] or [SimConfig.size_model])[0],
    }
    return SimConfig(**first, **kw), axes


def _load_noise(args, panel):
    if not getattr(args, "replicates", None):
        return None
    reps = io.load_replicates(args.replicates, panel)
    return replicate_noise_covariance(reps, panel, scale_factor=args.scale_factor)


def _estimator(args) -> EstimatorConfig:
    aug = None
    if getattr(args, "augment", False):
        lam = "auto" if args.ridge_lambda in (None, "auto") else float(args.ridge_lambda)
        aug = AugmentationSpec(lam=lam, imbalance_cap=args.cap)
    return EstimatorConfig(
        adjustment=getattr(args, "adjustment", "none"),
        rho=args.rho,
        tolerances=parse_tolerances(args.tol, args.tier),
        augmentation=aug,
    )


def _weights_frame(panel, gamma):
    tp = panel.treated()
    return pd.DataFrame({"state_id": tp.state_id, "region_id": tp.region_id, "gamma": gamma})


def _solution_record(res):
    sol = res.solution
    out = {
        "status": sol.status,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "polish_passes": sol.polish_passes,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "delta": res.problem.delta,
        "target": res.problem.v,
        "relax_rounds": res.relax_rounds,
        "imbalance": sol.imbalance,
    }
    if "ridge_lambda" in sol.info:
        out["ridge_lambda"] = sol.info["ridge_lambda"]
        out["negative_weights"] = int((sol.gamma < 0).sum())
    return out


# ----------------------------------------------------------------------
# commands


def cmd_calibrate(args):
    panel = io.load_panel(args.panel)
    noise = _load_noise(args, panel)
    cal = calibrate(panel, noise, args.adjustment)
    io.write_csv(io.calibrated_frame(cal), os.path.join(args.out, "calibrated.csv"))
    io.write_json(io.covariance_bundle(cal, noise), os.path.join(args.out, "covariances.json"))
    if cal.repair.clipped:
        logger.info("signal covariance: clipped eigenvalues %s", list(cal.repair.clipped))
    if cal.repair.ridge:
        logger.info("added ridge %g before inversion", cal.repair.ridge)


def _emit_fit(panel, res, cal, out):
    io.write_csv(_weights_frame(panel, res.gamma), os.path.join(out, "weights.csv"))
    covs = None if cal.kind == "none" else cal
    io.write_csv(
        balance_table(res.solution, panel, covs, target=res.problem.v),
        os.path.join(out, "balance.csv"),
    )
    io.write_csv(state_weight_summary(res.solution, panel), os.path.join(out, "state_summary.csv"))


def cmd_weigh(args):
    panel = io.load_panel(args.panel)
    cfg = _estimator(args)
    if args.covariates:
        cal = io.load_calibrated(args.covariates, panel)
        problem = assemble_problem(panel, cal, cfg.tolerances, cfg.rho)
        sol = solve_weights(problem)
        if sol.status == "infeasible":
            raise InfeasibleError(
                f"balance constraints are infeasible; maximal violation {sol.max_violation:.6g}",
                sol.max_violation,
            )
        if cfg.augmentation is not None:
            sol = ridge_augment(sol, problem.Z, problem.v, cfg.augmentation, problem.omega)
        res = FitResult(cal, problem, sol)
    else:
        res = fit(panel, cfg)
        cal = res.calibrated
    _emit_fit(panel, res, cal, args.out)
    io.write_json(_solution_record(res), os.path.join(args.out, "solution.json"))


def cmd_estimate(args):
    panel = io.load_panel(args.panel)
    noise = _load_noise(args, panel)
    cfg = _estimator(args)
    est, res = estimate_effect(panel, cfg, noise, jackknife=args.jackknife)
    _emit_fit(panel, res, res.calibrated, args.out)
    record = est.to_dict()
    record["estimator"] = cfg.label
    record["adjustment"] = cfg.adjustment
    record["summary"] = est.summary() if args.jackknife else None
    record["solution"] = _solution_record(res)
    io.write_json(record, os.path.join(args.out, "estimate.json"))
    if est.trace is not None:
        io.write_csv(est.trace.to_frame(), os.path.join(args.out, "jackknife.csv"))
    print(est.summary() if args.jackknife else f"{est.psi_hat:.2f}")


def _windows(args):
    windows = {}
    for item in args.window or ():
        target, _, train = item.partition(":")
        windows[target.strip()] = [t.strip() for t in train.split(",") if t.strip()]
    if args.target_year:
        if not args.train_years:
            raise SchemaError("--target-year requires --train-years")
        train = [t.strip() for t in args.train_years.split(",") if t.strip()]
        for ty in args.target_year:
            windows[str(ty)] = train
    if not windows:
        raise SchemaError("no validation windows given")
    return windows


def cmd_validate(args):
    panel = io.load_panel(args.panel)
    noise = _load_noise(args, panel)
    hist = io._read_csv(args.outcomes)
    order = io._align(hist, panel, args.outcomes)
    hist = hist.iloc[order].reset_index(drop=True)
    windows = _windows(args)
    years = set(windows) | {y for ys in windows.values() for y in ys}
    missing = sorted(y for y in years if y not in hist.columns)
    if missing:
        raise SchemaError(f"{args.outcomes}: missing year columns {missing}")
    numeric = pd.DataFrame({y: io._numeric(hist, [y], args.outcomes)[:, 0] for y in sorted(years)})
    tol = parse_tolerances(args.tol, args.tier)
    configs = [
        EstimatorConfig(adjustment=a, rho=r, tolerances=tol)
        for a in args.adjustments.split(",")
        for r in _float_list(args.rhos)
    ]
    table = placebo_validation(panel, numeric, windows, configs, noise)
    io.write_csv(table, os.path.join(args.out, "placebo.csv"))


def cmd_simulate(args):
    base, axes = read_grid(args.grid) if args.grid else (SimConfig(), {})
    over = {}
    if args.sims is not None:
        over["n_sims"] = args.sims
    if args.seed is not None:
        over["base_seed"] = args.seed
    if over:
        base = replace(base, **over)
    cells = expand_grid(base, **axes)
    metrics = run_study(cells)
    io.write_csv(metrics, os.path.join(args.out, "metrics.csv"))


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsbw", description="Balancing weights under measurement error.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def noise_args(sp):
        sp.add_argument("--replicates", help="long replicate CSV or glob of per-replicate CSVs")
        sp.add_argument("--scale-factor", type=_float, default=4.0)

    def weight_args(sp):
        sp.add_argument("--rho", type=_float, default=0.0)
        sp.add_argument("--tol", help="tolerance: a number or name=value list")
        sp.add_argument("--tier", action="append", help="name=tier assignments")
        sp.add_argument("--augment", action="store_true", help="apply ridge bias correction")
        sp.add_argument("--cap", type=_float, default=0.5)
        sp.add_argument("--lambda", dest="ridge_lambda", default="auto")

    sp = sub.add_parser("calibrate", help="adjust treated covariates")
    sp.add_argument("--panel", required=True)
    noise_args(sp)
    sp.add_argument("--adjustment", choices=ADJUSTMENTS, default="homogeneous")
    common(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("weigh", help="compute balancing weights")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--covariates", help="calibrated covariates CSV (default: raw covariates)")
    weight_args(sp)
    common(sp)
    sp.set_defaults(func=cmd_weigh)

    sp = sub.add_parser("estimate", help="effect estimate with jackknife interval")
    sp.add_argument("--panel", required=True)
    noise_args(sp)
    sp.add_argument("--adjustment", choices=ADJUSTMENTS, default="none")
    weight_args(sp)
    sp.add_argument("--jackknife", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("validate", help="placebo prediction errors on pre-period outcomes")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--outcomes", required=True, help="CSV of state_id, region_id and year columns")
    noise_args(sp)
    sp.add_argument("--train-years")
    sp.add_argument("--target-year", action="append")
    sp.add_argument("--window", action="append", help="target:train1,train2,...")
    sp.add_argument("--adjustments", default="none,homogeneous")
    sp.add_argument("--rhos", default="0")
    sp.add_argument("--tol")
    sp.add_argument("--tier", action="append")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="run the simulation study")
    sp.add_argument("--grid", help="key = value grid file")
    sp.add_argument("--sims", type=int)
    sp.add_argument("--seed", type=int)
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


def _setup_logging(out_dir):
    level = os.environ.get("HSBW_LOG_LEVEL", "WARNING").upper()
    logger.setLevel(logging.DEBUG)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, level, logging.WARNING))
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(console)
    file_handler = None
    if out_dir:
        file_handler = logging.FileHandler(os.path.join(out_dir, "decisions.log"), mode="w")
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(file_handler)
    logger.propagate = False
    return file_handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        io.ensure_dir(args.out)
        handler = _setup_logging(args.out)
        args.func(args)
        return 0
    except HSBWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.error("%s", exc)
        return exc.exit_code
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 5
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
