import sys
import os
import json
import re
import logging
import platform
import hashlib
from argparse import ArgumentParser, RawTextHelpFormatter

BLAS_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def pin_blas_threads(argv) -> bool:
    """Single-threaded BLAS for a timing run; only effective before numpy is first imported."""
    if "timing" not in argv:
        return False
    for var in BLAS_THREAD_VARS:
        os.environ.setdefault(var, "1")
    return True


# timing runs compare solvers on one core; global options may come before the subcommand
pin_blas_threads(sys.argv[1:])

import numpy as np
import pandas as pd
import scipy

from asymptotics import evaluate, lse_is_efficient, theoretical_ratios
from covariance import (EXPERIMENT_MODELS, UNILATERAL_MODELS, Ar1Params, LatticeSpectrum, Product,
                        model_from_id)
from design import LatticeDesign, RegressorKind, jump_measure
from errors import ConfigError, EXIT_OK, category_for, exit_code_for
from estimators import DenseGls, Estimator, PseudoBestEstimator, SeparableARModel, lse
from experiments import (SCHEMA_VERSION, ExperimentConfig, emit_spectral_surface, load_config,
                         resolve_output_dir, run_experiment1, run_experiment2, run_timing)
from fit import APPROXIMATIONS, approximation_orders, fit_separable, fit_separable_population, residuals
from sampler import DENSE_CAP, assemble_sigma, sample_field

LOGGER = logging.getLogger("latticepbe")

def slugify(name: str) -> str:
    s = re.sub(r"[\W_]+", "-", name.lower()).strip("-")
    return re.sub(r"-+", "-", s)


def parse_overrides(pairs) -> dict:
    """--set key=value pairs; values are JSON when they parse, plain strings otherwise."""
    out = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {pair!r} is not key=value")
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def write_json(path: str, payload: dict) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=lambda o: o.item() if hasattr(o, "item") else str(o))
    print(f"  ✓ Wrote: {path}")
    return path


def write_manifest(outdir: str, subcommand: str, seed, config: dict, config_hash: str | None = None) -> str:
    if config_hash is None:
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
        config_hash = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config_hash": config_hash,
        "config": config,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "pandas": pd.__version__},
    }
    return write_json(os.path.join(outdir, "manifest.json"), manifest)


# ---------------------------- Model / fit arguments ---------------------------- #

def model_from_args(args):
    """Experiment model by id; --phi1 / --phi2 swap an axis for a unit-variance AR(1)."""
    model = model_from_id(args.model)
    if args.phi1 is None and args.phi2 is None:
        return model
    if not model.separable:
        raise ConfigError(f"--phi1/--phi2 need a product model, {args.model!r} is isotropic")
    axis1 = Ar1Params.normalized(args.phi1) if args.phi1 is not None else model.axis1
    axis2 = Ar1Params.normalized(args.phi2) if args.phi2 is not None else model.axis2
    return Product(axis1, axis2)


def sep_from_params(raw: str, approx: str) -> SeparableARModel:
    """A separable model from inline JSON or a JSON file: {"axis1": [...], "axis2": [...], "sigma12": s}."""
    if os.path.exists(raw):
        with open(raw, "r", encoding="utf-8") as f:
            raw = f.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--params is neither a JSON object nor a JSON file: {e}") from e
    if "fits" in data:
        data = data["fits"].get(approx) or {}
    try:
        axis1 = data["axis1"]["coeffs"] if isinstance(data["axis1"], dict) else data["axis1"]
        axis2 = data["axis2"]["coeffs"] if isinstance(data["axis2"], dict) else data["axis2"]
        sep = SeparableARModel.from_coeffs(axis1, axis2, data.get("sigma12", 1.0))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"--params needs axis1, axis2 and sigma12: missing {e}") from e
    if sep.orders != approximation_orders(approx):
        raise ConfigError(f"--params has orders {sep.orders}, {approx!r} needs {approximation_orders(approx)}")
    return sep


def _sample_problem(args):
    model = model_from_args(args)
    design = LatticeDesign.build(args.n, args.regressor)
    eps = sample_field(model, args.n, args.seed, dense_cap=args.dense_cap).eps
    return model, design, design.X @ np.full(design.p, args.beta) + eps


# ---------------------------- Subcommands ---------------------------- #

def cmd_estimate(args, outdir: str) -> dict:
    model, design, y = _sample_problem(args)
    beta_lse = lse(design, y)
    sep = fit_separable(residuals(design, y, beta_lse), args.n, approximation_orders(args.approx))
    result = {
        "model": args.model, "regressor": design.kinds[0].value, "N": args.n, "seed": args.seed,
        "beta_true": args.beta, "approximation": args.approx, "fit": sep.as_dict(),
        Estimator.LSE.value: beta_lse.tolist(),
        Estimator.PBE.value: PseudoBestEstimator(design, sep).estimate(y).tolist(),
    }
    if args.n <= args.dense_cap:
        result[Estimator.GLSE.value] = DenseGls(design, assemble_sigma(model, args.n, args.dense_cap)).estimate(y).tolist()
    else:
        print(f"  ! N = {args.n} is above the dense cap {args.dense_cap}; GLSE skipped", file=sys.stderr)
    write_json(os.path.join(outdir, f"estimate-{slugify(args.model)}-n{args.n}-s{args.seed}.json"), result)
    return result


def cmd_fit(args, outdir: str) -> dict:
    _, design, y = _sample_problem(args)
    resid = residuals(design, y, lse(design, y))
    fits = {name: fit_separable(resid, args.n, orders).as_dict() for name, orders in APPROXIMATIONS.items()}
    result = {"model": args.model, "N": args.n, "seed": args.seed, "fits": fits}
    write_json(os.path.join(outdir, f"fit-{slugify(args.model)}-n{args.n}-s{args.seed}.json"), result)
    return result


def cmd_asymptotics(args, outdir: str) -> dict:
    model = model_from_args(args)
    jumps = jump_measure(args.regressor)
    sep = (sep_from_params(args.params, args.approx) if args.params
           else fit_separable_population(model, approximation_orders(args.approx)))
    f = LatticeSpectrum(model)
    limits = evaluate(f, sep.spectral_density, jumps)
    result = {
        "model": args.model, "regressor": RegressorKind.parse(args.regressor).value,
        "approximation": args.approx, "truncation": f.truncation, "g": sep.as_dict(),
        "asymptotic": {est.value: res.cov.tolist() for est, res in limits.items()},
        "lse_efficient": lse_is_efficient(jumps), "unilateral": args.model in UNILATERAL_MODELS,
    }
    if jumps.p == 1:
        result["ratios"] = theoretical_ratios(f, sep.spectral_density, jumps)._asdict()
    write_json(os.path.join(outdir, f"asymptotics-{slugify(args.model)}-{result['regressor']}-{args.approx}.json"),
               result)
    return result


def cmd_surface(args, outdir: str) -> dict:
    if args.params:
        evaluator, label = sep_from_params(args.params, args.approx).spectral_density, f"g-{args.approx}"
    else:
        evaluator, label = LatticeSpectrum(model_from_args(args)), f"f-{slugify(args.model)}"
    path = os.path.join(outdir, f"surface-{label}-{args.res}.csv")
    emit_spectral_surface(evaluator, args.res, path)
    print(f"  ✓ Wrote: {path}")
    return {"surface": path, "resolution": args.res}


def run_config_command(args) -> tuple[ExperimentConfig, str]:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.no_progress:
        overrides["progress"] = False
    cfg = load_config(args.config, overrides) if args.config else ExperimentConfig.from_dict(overrides)
    outdir = resolve_output_dir(args.output, cfg)
    runner = {"experiment1": lambda: run_experiment1(cfg, surface_dir=outdir),
              "experiment2": lambda: run_experiment2(cfg),
              "timing": lambda: run_timing(cfg)}[args.command]
    table = runner()
    for path in table.write(outdir):
        print(f"  ✓ Wrote: {path}")
    for path in table.artifacts:
        print(f"  ✓ Wrote: {path}")
    return cfg, outdir


# ---------------------------- Parser ---------------------------- #

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="latticepbe",
                            description="Lattice regression: LSE, GLSE and the separable-AR pseudo best estimator",
                            formatter_class=RawTextHelpFormatter)
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output", "-o", default=None,
                       help="Output directory (default $LATTICEPBE_OUTPUT or generated)")
        p.add_argument("--seed", type=int, default=None, help="Seed (base seed for experiments)")

    def problem(p, with_n=True):
        p.add_argument("--model", default="ar1xar1", choices=sorted(EXPERIMENT_MODELS), help="True covariance model")
        p.add_argument("--phi1", type=float, default=None, help="Replace axis 1 by a unit-variance AR(1)")
        p.add_argument("--phi2", type=float, default=None, help="Replace axis 2 by a unit-variance AR(1)")
        p.add_argument("--regressor", default="poly", choices=[k.value for k in RegressorKind])
        p.add_argument("--approx", default="ar1xar1", choices=sorted(APPROXIMATIONS),
                       help="Separable AR approximation")
        if with_n:
            p.add_argument("--n", type=int, default=20, help="Grid side N")
            p.add_argument("--beta", type=float, default=2.0, help="True regression coefficient")
            p.add_argument("--dense-cap", type=int, default=DENSE_CAP, help="Largest N for dense covariances")

    p = sub.add_parser("estimate", help="LSE, GLSE and PBE on one simulated field")
    common(p)
    problem(p)
    p = sub.add_parser("fit", help="Separable AR fits from the LSE residuals of one simulated field")
    common(p)
    problem(p)
    p = sub.add_parser("asymptotics", help="Limit variances and theoretical efficiency ratios")
    common(p)
    problem(p, with_n=False)
    p.add_argument("--params", default=None, help="Fitted g as JSON or a fit JSON file (default: population fit)")

    for name, text in (("experiment1", "Scaled empirical PBE variance vs asymptotic variance"),
                       ("experiment2", "Empirical efficiency ratios LSE/GLSE and PBE/GLSE"),
                       ("timing", "Wall-clock comparison of LSE, dense GLSE and PBE")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--config", "-c", default=None, help="Experiment config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key")
        p.add_argument("--no-progress", action="store_true", help="Hide progress bars")

    p = sub.add_parser("surface", help="Spectral density grid over [0, pi]^2 as CSV")
    common(p)
    problem(p, with_n=False)
    p.add_argument("--params", default=None, help="Fitted g as JSON or a fit JSON file; omit for the true f")
    p.add_argument("--res", type=int, default=64, help="Grid points per axis")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    print(f"▶ Running: {args.command}")
    try:
        if args.command in ("experiment1", "experiment2", "timing"):
            cfg, outdir = run_config_command(args)
            write_manifest(outdir, args.command, cfg.base_seed, cfg.as_dict(), cfg.config_hash())
        else:
            if args.seed is None:
                args.seed = 0
            outdir = resolve_output_dir(args.output)
            handler = {"estimate": cmd_estimate, "fit": cmd_fit,
                       "asymptotics": cmd_asymptotics, "surface": cmd_surface}[args.command]
            handler(args, outdir)
            config = {k: v for k, v in vars(args).items() if k not in ("command", "output", "verbose")}
            write_manifest(outdir, args.command, args.seed, config)
    except Exception as e:
        LOGGER.debug("%s failed", args.command, exc_info=True)
        print(f"error[{category_for(e)}]: {e}", file=sys.stderr)
        return exit_code_for(e)
    print("\nAll done ✅")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
