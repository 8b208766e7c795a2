"""
Monte Carlo and timing harness.

experiment 1  scaled empirical PBE variance against its asymptotic value
experiment 2  empirical variance ratios LSE/GLSE and PBE/GLSE on paired replicates
timing        wall-clock seconds of LSE, dense GLSE and PBE at one grid size

Seeds: replicate r of stage s draws from base_seed + s * replicates + r.
Stage 0 is the fit stage at fit_n; stage k + 1 belongs to n_list[k].
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from asymptotics import asym_cov_glse, asym_cov_lse, asym_cov_pbe, lse_is_efficient, theoretical_ratios
from covariance import UNILATERAL_MODELS, LatticeSpectrum, model_from_id
from design import LatticeDesign, RegressorKind, jump_measure
from errors import ConfigError, ParameterDomainError, ProtocolWarning
from estimators import DenseGls, PseudoBestEstimator, SeparableARModel, lse
from fit import FIT_ERRORS, approximation_orders, average_fits, fit_separable, residuals
from sampler import DENSE_CAP, FieldSampler, assemble_sigma

LOGGER = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_OUTDIR = "generated"
OUTPUT_ENV = "LATTICEPBE_OUTPUT"
CSV_FLOAT_FORMAT = "%.6g"
EXCLUSION_LIMIT = 0.01
MIN_TIMING_RUNS = 5

# keys that change where or how fast results appear, never what they are
_NON_SEMANTIC = ("output_dir", "progress", "workers")


# ---------------------------- Config ---------------------------- #

@dataclass
class ExperimentConfig:
    models: list[str] = field(default_factory=lambda: ["matern2"])
    regressor: str = "harmonic"
    approximations: list[str] = field(default_factory=lambda: ["ar1xar1", "ar1xar2", "ar2xar2"])
    n_list: list[int] = field(default_factory=lambda: [20, 60])
    fit_n: int = 60
    replicates: int = 1000
    base_seed: int = 20240
    beta: float = 2.0
    per_replicate_fit: bool = False
    output_dir: str | None = None
    dense_cap: int = DENSE_CAP
    workers: int = 1
    progress: bool = True
    surface_resolution: int = 0
    timing_n: int = 100
    timing_runs: int = MIN_TIMING_RUNS

    def __post_init__(self):
        if isinstance(self.models, str):
            self.models = [self.models]
        if isinstance(self.approximations, str):
            self.approximations = [self.approximations]
        for model_id in self.models:
            model_from_id(model_id)
        RegressorKind.parse(self.regressor)
        if not self.approximations:
            raise ConfigError("at least one approximation is required")
        max_order = max(max(approximation_orders(a)) for a in self.approximations)
        if self.replicates < 2:
            raise ConfigError(f"replicates must be >= 2, got {self.replicates}")
        for N in [*self.n_list, self.fit_n]:
            if N < max_order + 2:
                raise ConfigError(f"grid side {N} is too small for AR order {max_order}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.timing_runs < MIN_TIMING_RUNS:
            raise ConfigError(f"timing_runs must be >= {MIN_TIMING_RUNS}, got {self.timing_runs}")
        if self.surface_resolution != 0 and self.surface_resolution < 2:
            raise ConfigError(f"surface_resolution must be 0 (off) or >= 2, got {self.surface_resolution}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; known keys are {sorted(known)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"bad config value: {e}") from e

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        semantic = {k: v for k, v in self.as_dict().items() if k not in _NON_SEMANTIC}
        canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def stage_seed(self, stage: int, replicate: int) -> int:
        return self.base_seed + stage * self.replicates + replicate


def load_config(path: str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON object; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"failed to parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object, got {type(data).__name__}")
    data.update(overrides or {})
    return ExperimentConfig.from_dict(data)


def resolve_output_dir(cli_value: str | None = None, cfg: ExperimentConfig | None = None) -> str:
    return (cli_value or os.environ.get(OUTPUT_ENV)
            or (cfg.output_dir if cfg is not None else None) or DEFAULT_OUTDIR)


# ---------------------------- Results ---------------------------- #

def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


@dataclass
class ResultTable:
    name: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def write(self, outdir: str) -> tuple[str, str]:
        os.makedirs(outdir, exist_ok=True)
        csv_path = os.path.join(outdir, f"{self.name}.csv")
        json_path = os.path.join(outdir, f"{self.name}.json")
        self.to_frame().to_csv(csv_path, index=False, float_format=CSV_FLOAT_FORMAT)
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump({"provenance": self.provenance, "rows": self.rows}, f, indent=2, default=_json_default)
        return csv_path, json_path


def emit_spectral_surface(evaluator: Callable, resolution: int, path: str) -> pd.DataFrame:
    """Evaluate a spectral density on a resolution x resolution grid over [0, pi]^2 and write it as CSV."""
    if resolution < 2:
        raise ParameterDomainError(f"surface resolution must be >= 2, got {resolution}")
    axis = np.linspace(0.0, np.pi, resolution)
    l1, l2 = np.meshgrid(axis, axis, indexing="ij")
    density = np.asarray(evaluator(l1, l2), dtype=float)
    frame = pd.DataFrame({"lambda1": l1.ravel(), "lambda2": l2.ravel(), "density": density.ravel()})
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return frame


# ---------------------------- Monte Carlo helpers ---------------------------- #

def _map_replicates(fn: Callable[[int], Any], count: int, cfg: ExperimentConfig, desc: str) -> list:
    """fn over range(count), results in index order whatever the worker count."""
    bar = dict(total=count, desc=desc, disable=not cfg.progress, leave=False)
    if cfg.workers <= 1:
        return [fn(r) for r in tqdm(range(count), **bar)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(tqdm(pool.map(fn, range(count)), **bar))


def scaled_variance(estimates: Sequence[float], norm: float) -> float:
    return float(norm ** 2 * np.var(np.asarray(estimates, dtype=float), ddof=1))


def variance_se(value: float, replicates: int) -> float:
    return value * np.sqrt(2.0 / (replicates - 1))


def ratio_se(ratio: float, numer: Sequence[float], denom: Sequence[float]) -> float:
    """Delta-method standard error of var(numer) / var(denom) on paired samples."""
    R = len(numer)
    rho = np.corrcoef(numer, denom)[0, 1] if np.std(numer) > 0 and np.std(denom) > 0 else 0.0
    return float(ratio * np.sqrt(4.0 * max(1.0 - rho * rho, 0.0) / (R - 1)))


def _check_exclusions(excluded: int, attempted: int, what: str):
    if attempted and excluded / attempted > EXCLUSION_LIMIT:
        warnings.warn(f"{what}: {excluded} of {attempted} fits excluded (> {EXCLUSION_LIMIT:.0%})",
                      ProtocolWarning, stacklevel=3)


@dataclass
class FixedFits:
    """Averaged separable fits per approximation, from the fit stage."""

    fits: dict[str, SeparableARModel]
    excluded: dict[str, int]
    replicates: int


def fixed_fits(cfg: ExperimentConfig, model_id: str, kind: RegressorKind) -> FixedFits:
    model = model_from_id(model_id)
    design = LatticeDesign.build(cfg.fit_n, kind)
    sampler = FieldSampler(model, cfg.fit_n, dense_cap=cfg.dense_cap)
    orders = {name: approximation_orders(name) for name in cfg.approximations}

    def one(r: int) -> dict[str, SeparableARModel | None]:
        y = _response(design, sampler.draw(cfg.stage_seed(0, r)).eps, cfg.beta)
        resid = residuals(design, y, lse(design, y))
        out = {}
        for name, order in orders.items():
            try:
                out[name] = fit_separable(resid, cfg.fit_n, order)
            except FIT_ERRORS as e:
                LOGGER.debug("fit %s excluded at replicate %d: %s", name, r, e)
                out[name] = None
        return out

    results = _map_replicates(one, cfg.replicates, cfg, f"fit {model_id} N={cfg.fit_n}")
    fits, excluded = {}, {}
    for name in orders:
        accepted = [res[name] for res in results if res[name] is not None]
        excluded[name] = cfg.replicates - len(accepted)
        _check_exclusions(excluded[name], cfg.replicates, f"{model_id}/{name} fit stage")
        fits[name] = average_fits(accepted)
        LOGGER.info("%s/%s averaged fit: %s", model_id, name, fits[name].as_dict())
    return FixedFits(fits=fits, excluded=excluded, replicates=cfg.replicates)


def _response(design: LatticeDesign, eps: np.ndarray, beta: float) -> np.ndarray:
    return design.X @ np.full(design.p, beta) + eps


def _fit_columns(sep: SeparableARModel) -> dict[str, Any]:
    return {"fit_axis1": " ".join(f"{c:.6g}" for c in sep.axis1.coeffs),
            "fit_axis2": " ".join(f"{c:.6g}" for c in sep.axis2.coeffs),
            "fit_sigma12": sep.sigma12}


def _provenance(cfg: ExperimentConfig, experiment: str) -> dict[str, Any]:
    return {"experiment": experiment, "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.config_hash(), "config": cfg.as_dict()}


def _seed_columns(cfg: ExperimentConfig, stage: int) -> dict[str, Any]:
    return {"seed_first": cfg.stage_seed(stage, 0), "seed_last": cfg.stage_seed(stage, cfg.replicates - 1),
            "config_hash": cfg.config_hash()}


# ---------------------------- Experiment 1 ---------------------------- #

def run_experiment1(cfg: ExperimentConfig, surface_dir: str | None = None) -> ResultTable:
    kind = RegressorKind.parse(cfg.regressor)
    jumps = jump_measure(kind)
    table = ResultTable(name=f"experiment1_{kind.value}", provenance=_provenance(cfg, "experiment1"))

    for model_id in cfg.models:
        model = model_from_id(model_id)
        f = LatticeSpectrum(model)
        fixed = fixed_fits(cfg, model_id, kind)
        asym_glse = float(asym_cov_glse(f, jumps)[0, 0])
        asym_lse = float(asym_cov_lse(f, jumps)[0, 0])

        if surface_dir and cfg.surface_resolution >= 2:
            path = os.path.join(surface_dir, f"surface_{model_id}_f.csv")
            emit_spectral_surface(f, cfg.surface_resolution, path)
            table.artifacts.append(path)
            for name, sep in fixed.fits.items():
                path = os.path.join(surface_dir, f"surface_{model_id}_{name}_g.csv")
                emit_spectral_surface(sep.spectral_density, cfg.surface_resolution, path)
                table.artifacts.append(path)

        for stage, N in enumerate(cfg.n_list, start=1):
            design = LatticeDesign.build(N, kind)
            sampler = FieldSampler(model, N, dense_cap=cfg.dense_cap)
            fixed_pbe = {name: PseudoBestEstimator(design, sep) for name, sep in fixed.fits.items()}

            def one(r: int, design=design, sampler=sampler, fixed_pbe=fixed_pbe, N=N, stage=stage):
                y = _response(design, sampler.draw(cfg.stage_seed(stage, r)).eps, cfg.beta)
                beta_lse = lse(design, y)
                out = {"LSE": float(beta_lse[0])}
                if cfg.per_replicate_fit:
                    resid = residuals(design, y, beta_lse)
                    for name in cfg.approximations:
                        try:
                            sep = fit_separable(resid, N, approximation_orders(name))
                            out[name] = float(PseudoBestEstimator(design, sep).estimate(y)[0])
                        except FIT_ERRORS:
                            out[name] = None
                else:
                    for name, estimator in fixed_pbe.items():
                        out[name] = float(estimator.estimate(y)[0])
                return out

            results = _map_replicates(one, cfg.replicates, cfg, f"experiment1 {model_id} N={N}")
            norm = float(design.norms[0])
            lse_var = scaled_variance([res["LSE"] for res in results], norm)

            for name, sep in fixed.fits.items():
                values = [res[name] for res in results if res[name] is not None]
                excluded = cfg.replicates - len(values)
                _check_exclusions(excluded, cfg.replicates, f"{model_id}/{name} N={N}")
                pbe_var = scaled_variance(values, norm)
                table.rows.append({
                    "model": model_id, "regressor": kind.value, "approximation": name, "N": N,
                    "replicates": len(values), "excluded": excluded,
                    "fit_excluded": fixed.excluded[name],
                    "scaled_var_pbe": pbe_var, "se_pbe": variance_se(pbe_var, len(values)),
                    "asym_pbe": float(asym_cov_pbe(f, sep.spectral_density, jumps)[0, 0]),
                    "scaled_var_lse": lse_var, "se_lse": variance_se(lse_var, cfg.replicates),
                    "asym_lse": asym_lse, "asym_glse": asym_glse,
                    "unilateral": model_id in UNILATERAL_MODELS,
                    **_fit_columns(sep), **_seed_columns(cfg, stage),
                })
    return table


# ---------------------------- Experiment 2 ---------------------------- #

def run_experiment2(cfg: ExperimentConfig) -> ResultTable:
    kind = RegressorKind.parse(cfg.regressor)
    jumps = jump_measure(kind)
    efficient = lse_is_efficient(jumps)
    table = ResultTable(name=f"experiment2_{kind.value}", provenance=_provenance(cfg, "experiment2"))

    for model_id in cfg.models:
        model = model_from_id(model_id)
        f = LatticeSpectrum(model)
        fixed = fixed_fits(cfg, model_id, kind)

        for stage, N in enumerate(cfg.n_list, start=1):
            design = LatticeDesign.build(N, kind)
            gls = DenseGls(design, assemble_sigma(model, N, cfg.dense_cap))
            sampler = FieldSampler(model, N, dense_cap=cfg.dense_cap)
            pbes = {name: PseudoBestEstimator(design, sep) for name, sep in fixed.fits.items()}

            # one field per replicate feeds every estimator
            def one(r: int, design=design, sampler=sampler, gls=gls, pbes=pbes, stage=stage):
                y = _response(design, sampler.draw(cfg.stage_seed(stage, r)).eps, cfg.beta)
                out = {"LSE": float(lse(design, y)[0]), "GLSE": float(gls.estimate(y)[0])}
                out.update({name: float(est.estimate(y)[0]) for name, est in pbes.items()})
                return out

            results = _map_replicates(one, cfg.replicates, cfg, f"experiment2 {model_id} N={N}")
            series = {key: np.array([res[key] for res in results]) for key in results[0]}
            var = {key: float(np.var(values, ddof=1)) for key, values in series.items()}
            lse_ratio = var["LSE"] / var["GLSE"]
            norm = float(design.norms[0])

            for name, sep in fixed.fits.items():
                pbe_ratio = var[name] / var["GLSE"]
                theory = theoretical_ratios(f, sep.spectral_density, jumps)
                table.rows.append({
                    "model": model_id, "regressor": kind.value, "approximation": name, "N": N,
                    "replicates": cfg.replicates, "fit_excluded": fixed.excluded[name],
                    "lse_ratio": lse_ratio, "lse_ratio_se": ratio_se(lse_ratio, series["LSE"], series["GLSE"]),
                    "pbe_ratio": pbe_ratio, "pbe_ratio_se": ratio_se(pbe_ratio, series[name], series["GLSE"]),
                    "theory_lse_ratio": theory.lse_ratio, "theory_pbe_ratio": theory.pbe_ratio,
                    "scaled_var_glse": norm ** 2 * var["GLSE"],
                    "lse_efficient": efficient, "unilateral": model_id in UNILATERAL_MODELS,
                    **_fit_columns(sep), **_seed_columns(cfg, stage),
                })
    return table


# ---------------------------- Timing ---------------------------- #

def median_seconds(fn: Callable[[], Any], runs: int) -> float:
    """Median wall time of fn over runs calls, after one untimed warm-up call."""
    fn()
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def run_timing(cfg: ExperimentConfig) -> ResultTable:
    """One row per (model, approximation). fit_seconds covers only the separable fit on fixed residuals."""
    kind = RegressorKind.parse(cfg.regressor)
    N, half = cfg.timing_n, max(cfg.timing_n // 2, 4)
    table = ResultTable(name=f"timing_{'-'.join(cfg.models)}_N{N}", provenance=_provenance(cfg, "timing"))

    for model_id in cfg.models:
        model = model_from_id(model_id)

        def problem(n: int, model=model):
            design = LatticeDesign.build(n, kind)
            eps = FieldSampler(model, n, dense_cap=cfg.dense_cap).draw(cfg.base_seed).eps
            return design, _response(design, eps, cfg.beta)

        design, y = problem(N)
        design_half, y_half = problem(half)
        resid = residuals(design, y, lse(design, y))
        resid_half = residuals(design_half, y_half, lse(design_half, y_half))

        LOGGER.info("timing LSE for %s at N = %d", model_id, N)
        lse_s = median_seconds(lambda: lse(design, y), cfg.timing_runs)
        Sigma = assemble_sigma(model, N, cfg.dense_cap)
        LOGGER.info("timing dense GLSE for %s at N = %d", model_id, N)
        glse_s = median_seconds(lambda: DenseGls(design, Sigma).estimate(y), cfg.timing_runs)
        del Sigma

        for name in cfg.approximations:
            orders = approximation_orders(name)
            sep = fit_separable(resid, N, orders)
            sep_half = fit_separable(resid_half, half, orders)
            fit_s = median_seconds(lambda: fit_separable(resid, N, orders), cfg.timing_runs)
            pbe_s = median_seconds(lambda: PseudoBestEstimator(design, sep).estimate(y), cfg.timing_runs)
            half_s = median_seconds(lambda: PseudoBestEstimator(design_half, sep_half).estimate(y_half),
                                    cfg.timing_runs)
            table.rows.append({
                "model": model_id, "regressor": kind.value, "approximation": name, "N": N,
                "runs": cfg.timing_runs, "lse_seconds": lse_s, "glse_seconds": glse_s,
                "fit_seconds": fit_s, "pbe_seconds": pbe_s, "pbe_total_seconds": fit_s + pbe_s,
                "fit_to_pbe": fit_s / pbe_s if pbe_s > 0 else float("nan"),
                "pbe_half_N": half, "pbe_half_seconds": half_s,
                "pbe_growth": pbe_s / half_s if half_s > 0 else float("nan"),
                "config_hash": cfg.config_hash(),
            })
    return table
