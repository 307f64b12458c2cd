"""Experiment drivers: the Beta product study and the latent trait study.

Both emit CSV rows that are byte-identical across runs with the same seed
and config, independent of the thread count: every work unit owns a
dedicated counter-based stream keyed by its index, results are written in
index order, and nothing touches global RNG state.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import batch_mce, batch_slices, make_streams, moments
from .covariation import estimator_tci_diagnostics
from .evidence import batch_report, bg_estimate, bh_estimate, rm_estimate, \
    joint_integrand_blocks
from .latent import (Dataset, ModelConfig, fit_importance, mwg_sample,
                     sample_importance, simulate_dataset)
from .logspace import SignedLog, signed_sub
from .quadrature import gauss_hermite, tensor_rule

BETA_PRODUCT_COLUMNS = [
    "experiment", "seed", "N", "lambda1", "lambda2", "R",
    "log_truth", "log_joint", "log_marginal", "mce_joint", "mce_marginal", "tci",
]
GLLVM_TABLE_COLUMNS = ["approach", "estimator", "pooled_log_estimate",
                       "batch_mean", "mce"]
GLLVM_BATCH_COLUMNS = GLLVM_TABLE_COLUMNS + ["batch_index", "batch_log_estimate"]
GLLVM_DIAG_COLUMNS = ["estimator", "block", "cv_min", "cv_median", "cv_max",
                      "tci", "net_log_effect"]


@dataclass(frozen=True)
class BetaProductConfig:
    """Protocol for estimating the mean of a product of i.i.d. Beta draws."""

    n_factors: int = 10
    lambda1: float = 1.0
    lambda2: float = 2.0
    r_schedule: tuple[int, ...] = (250_000,)
    n_batches: int = 25
    seed: int = 0
    replicates: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if not self.r_schedule or any(r < self.n_batches for r in self.r_schedule):
            raise ValueError("every R must be >= n_batches")
        if self.n_batches < 2:
            raise ValueError("need at least 2 batches for an MCE")
        if self.replicates < 1 or self.threads < 1:
            raise ValueError("replicates and threads must be >= 1")

    @property
    def log_truth(self) -> float:
        return self.n_factors * math.log(self.lambda1 / (self.lambda1 + self.lambda2))


def _beta_product_unit(config: BetaProductConfig, unit: int, r: int) -> dict:
    rng = make_streams(config.seed).stream(unit)
    values = rng.beta(config.lambda1, config.lambda2,
                      size=(r, config.n_factors))
    slices = batch_slices(r, config.n_batches)
    edges = np.array([s.start for s in slices])
    sizes = np.array([s.stop - s.start for s in slices], dtype=np.float64)

    batch_col_sums = np.add.reduceat(values, edges, axis=0)
    col_sums = batch_col_sums.sum(axis=0)
    log_marginal = float(np.log(col_sums / r).sum())
    batch_log_marginal = np.log(batch_col_sums / sizes[:, None]).sum(axis=1)

    np.log(values, out=values)
    row_logs = values.sum(axis=1)
    log_joint = float(logsumexp(row_logs) - math.log(r))
    batch_log_joint = np.array([
        logsumexp(row_logs[s]) - math.log(s.stop - s.start) for s in slices
    ])

    tci = signed_sub(SignedLog(log_joint, 1.0), SignedLog(log_marginal, 1.0)).value
    return {
        "experiment": "beta-product",
        "seed": config.seed,
        "N": config.n_factors,
        "lambda1": config.lambda1,
        "lambda2": config.lambda2,
        "R": r,
        "log_truth": config.log_truth,
        "log_joint": log_joint,
        "log_marginal": log_marginal,
        "mce_joint": batch_mce(batch_log_joint),
        "mce_marginal": batch_mce(batch_log_marginal),
        "tci": tci,
    }


def beta_product_rows(config: BetaProductConfig) -> list[dict]:
    """One row per (replicate, R) pair, in deterministic order."""
    units = [
        (rep * len(config.r_schedule) + idx, r)
        for rep in range(config.replicates)
        for idx, r in enumerate(config.r_schedule)
    ]
    if config.threads == 1:
        return [_beta_product_unit(config, unit, r) for unit, r in units]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        futures = [pool.submit(_beta_product_unit, config, unit, r)
                   for unit, r in units]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class GllvmConfig:
    """Protocol for the latent trait evidence study."""

    n_items: int = 6
    n_cases: int = 100
    n_factors: int = 1
    n_kept: int = 5_000
    burn_in: int = 2_000
    thin: int = 5
    quad_order: int = 21
    n_batches: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.n_kept < self.n_batches:
            raise ValueError("need at least one draw per batch")
        if self.n_batches < 1:
            raise ValueError("n_batches must be >= 1")

    @classmethod
    def desk_scale(cls, seed: int = 0) -> "GllvmConfig":
        return cls(seed=seed)

    @classmethod
    def paper_scale(cls, seed: int = 0) -> "GllvmConfig":
        return cls(n_items=6, n_cases=600, n_factors=2, n_kept=50_000,
                   burn_in=10_000, thin=10, quad_order=21, n_batches=50,
                   seed=seed)

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_items=self.n_items, n_cases=self.n_cases,
                           n_factors=self.n_factors)


@dataclass
class GllvmResults:
    runs: dict          # (method, mode) -> BmlRun
    table_rows: list[dict]
    batch_rows: list[dict]
    diagnostic_rows: list[dict]
    dataset: Dataset = None
    true_params: object = None


def gllvm_results(config: GllvmConfig, use_numba: bool | None = None) -> GllvmResults:
    """Simulate, sample the posterior, and run all six estimator variants."""
    streams = make_streams(config.seed)
    model_config = config.model_config()
    data, true_params, _ = simulate_dataset(model_config, streams.stream(0))
    draws = mwg_sample(data, model_config, n_kept=config.n_kept,
                       burn_in=config.burn_in, thin=config.thin,
                       rng=streams.stream(1), use_numba=use_numba)
    g_joint = fit_importance(draws, include_latent=True)
    g_marginal = fit_importance(draws, include_latent=False)
    gs_joint = sample_importance(g_joint, streams.stream(2), config.n_kept)
    gs_marginal = sample_importance(g_marginal, streams.stream(3), config.n_kept)
    rule = tensor_rule(gauss_hermite(config.quad_order), config.n_factors)

    runs = {}
    for mode, g, gs, quad in (("joint", g_joint, gs_joint, None),
                              ("marginal", g_marginal, gs_marginal, rule)):
        runs[("rm", mode)] = rm_estimate(
            data, draws, g, mode, rule=quad, n_batches=config.n_batches,
            use_numba=use_numba)
        runs[("bh", mode)] = bh_estimate(
            data, draws, gs, g, mode, rule=quad, n_batches=config.n_batches,
            use_numba=use_numba)
        runs[("bg", mode)] = bg_estimate(
            data, draws, gs, g, mode, rule=quad, n_batches=config.n_batches,
            use_numba=use_numba)

    table_rows, batch_rows, diag_rows = [], [], []
    for mode in ("joint", "marginal"):
        for method in ("rm", "bh", "bg"):
            run = runs[(method, mode)]
            row = batch_report(run)
            table_rows.append(row)
            for b, value in enumerate(run.batch_log_estimates):
                batch_rows.append({**row, "batch_index": b,
                                   "batch_log_estimate": float(value)})
            if mode == "joint":
                diag_rows.extend(_joint_diagnostics(run))
    return GllvmResults(runs=runs, table_rows=table_rows, batch_rows=batch_rows,
                        diagnostic_rows=diag_rows, dataset=data,
                        true_params=true_params)


def _cv_summary(block) -> tuple[float, float, float]:
    cv = moments(block).cv
    cv = cv[np.isfinite(cv)]
    return float(cv.min()), float(np.median(cv)), float(cv.max())


def _joint_diagnostics(run) -> list[dict]:
    numerator, denominator = joint_integrand_blocks(run)
    diag = estimator_tci_diagnostics(numerator, denominator)
    name = run.method.upper()
    rows = []
    lo, med, hi = _cv_summary(numerator)
    rows.append({"estimator": name, "block": "numerator", "cv_min": lo,
                 "cv_median": med, "cv_max": hi, "tci": diag.tci_numerator,
                 "net_log_effect": ""})
    if denominator is not None:
        lo, med, hi = _cv_summary(denominator)
        rows.append({"estimator": name, "block": "denominator", "cv_min": lo,
                     "cv_median": med, "cv_max": hi,
                     "tci": diag.tci_denominator, "net_log_effect": ""})
    rows.append({"estimator": name, "block": "net", "cv_min": "",
                 "cv_median": "", "cv_max": "", "tci": "",
                 "net_log_effect": diag.net_log_effect})
    return rows


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    """Write rows in fixed column order; floats via repr for stable bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row[c]) for c in columns])


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
