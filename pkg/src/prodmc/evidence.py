"""Evidence (marginal likelihood) estimators: reciprocal, harmonic, geometric.

Three estimators of log f(Y) from posterior draws and an importance
density g, each usable in two ways for a latent-variable model:

* joint approach: the parameter vector is augmented with the latent scores,
  g carries a latent block, and the conditional (joint) likelihood is used;
* marginal approach: latent scores are integrated out by quadrature first
  and only the structural parameters remain.

All arithmetic is log-sum-exp; the estimated magnitudes (e^-2000 and
smaller) make linear space unusable.  The core estimators take plain arrays
of log f(Y|.)pi(.) and log g(.) values so any model with those quantities
(e.g. the closed-form conjugate oracle in :mod:`prodmc.conjugate`) can
drive them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EstimateReport, SampleBlock, batch_mce, batch_slices
from .covariation import TciDiagnostics, estimator_tci_diagnostics
from .logspace import log_mean_exp
from .latent import (Dataset, ImportanceFn, GSample, ModelConfig,
                     PosteriorDraws, joint_case_loglik_draws, log_g,
                     log_g_latent, log_g_theta, log_prior_transformed,
                     marginal_loglik_draws)
from .quadrature import QuadratureRule

METHODS = ("rm", "bh", "bg")
MODES = ("joint", "marginal")


def _check_finite(name: str, values: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-finite {name} at draw index {idx}")


def rm_log_evidence(log_g_post: np.ndarray, log_fpi_post: np.ndarray) -> float:
    """Reciprocal importance estimator over posterior draws.

    -log mean exp(log g - log f(Y|.)pi(.)).
    """
    return float(-log_mean_exp(log_g_post - log_fpi_post))


def bh_log_evidence(log_g_gdraws: np.ndarray, log_fpi_post: np.ndarray) -> float:
    """Harmonic bridge: mean of 1/g over g-draws over mean of 1/(f pi) over
    posterior draws, in log space."""
    return float(log_mean_exp(-log_g_gdraws) - log_mean_exp(-log_fpi_post))


def bg_log_evidence(log_fpi_gdraws: np.ndarray, log_g_gdraws: np.ndarray,
                    log_fpi_post: np.ndarray, log_g_post: np.ndarray) -> float:
    """Geometric bridge: sqrt ratios averaged under g and under the posterior."""
    num = log_mean_exp(0.5 * (log_fpi_gdraws - log_g_gdraws))
    den = log_mean_exp(-0.5 * (log_fpi_post - log_g_post))
    return float(num - den)


@dataclass(frozen=True)
class JointFactorSet:
    """Per-case log factors of the joint-approach integrand at a draw set.

    Rows index draws, columns cases.  The averaged variables of each
    estimator factorize over cases; these pieces reconstruct both the
    per-draw summands (sums over cases) and the per-case factor blocks.
    """

    case_loglik: np.ndarray          # (R, n_cases)
    log_prior_latent_cases: np.ndarray
    log_g_latent_cases: np.ndarray
    log_prior_theta: np.ndarray      # (R,)
    log_g_theta: np.ndarray          # (R,)

    @property
    def log_fpi(self) -> np.ndarray:
        return (self.case_loglik.sum(axis=1)
                + self.log_prior_latent_cases.sum(axis=1)
                + self.log_prior_theta)

    @property
    def log_g(self) -> np.ndarray:
        return self.log_g_latent_cases.sum(axis=1) + self.log_g_theta


@dataclass
class BmlRun:
    """One estimator/mode evaluation with its batch breakdown."""

    method: str
    mode: str
    report: EstimateReport            # pooled estimate, batch-based MCE
    batch_log_estimates: np.ndarray
    batch_mean: float
    n_posterior_draws: int
    n_g_draws: int
    posterior_factors: JointFactorSet | None = None
    g_factors: JointFactorSet | None = None

    @property
    def log_estimate(self) -> float:
        return self.report.log_estimate

    @property
    def mce(self) -> float:
        return self.report.mce


def _pooled_and_batches(method: str, n_batches: int,
                        log_fpi_post, log_g_post,
                        log_fpi_g=None, log_g_g=None,
                        shuffle_rng=None) -> tuple[float, np.ndarray]:
    def estimate(post_idx, g_idx) -> float:
        if method == "rm":
            return rm_log_evidence(log_g_post[post_idx], log_fpi_post[post_idx])
        if method == "bh":
            return bh_log_evidence(log_g_g[g_idx], log_fpi_post[post_idx])
        if method == "bg":
            return bg_log_evidence(log_fpi_g[g_idx], log_g_g[g_idx],
                                   log_fpi_post[post_idx], log_g_post[post_idx])
        raise ValueError(f"unknown method {method!r}")

    n_post = log_fpi_post.shape[0]
    pooled = estimate(slice(None), slice(None))

    # batches are contiguous in iteration order; a shuffled partition is
    # available to probe sensitivity to within-chain ordering
    def indices(n):
        if shuffle_rng is None:
            return batch_slices(n, n_batches)
        perm = shuffle_rng.permutation(n)
        return [perm[s] for s in batch_slices(n, n_batches)]

    post_batches = indices(n_post)
    if method == "rm":
        g_batches = [None] * n_batches
    else:
        g_batches = indices(log_g_g.shape[0])
    batches = np.array([estimate(ps, gs)
                        for ps, gs in zip(post_batches, g_batches)])
    return pooled, batches


def _assemble_run(method: str, mode: str, n_batches: int,
                  log_fpi_post, log_g_post, log_fpi_g=None, log_g_g=None,
                  posterior_factors=None, g_factors=None,
                  shuffle_rng=None) -> BmlRun:
    _check_finite("log f(Y|.)pi(.) at posterior draws", log_fpi_post)
    _check_finite("log g at posterior draws", log_g_post)
    if log_fpi_g is not None:
        _check_finite("log f(Y|.)pi(.) at g-draws", log_fpi_g)
    if log_g_g is not None:
        _check_finite("log g at g-draws", log_g_g)
    pooled, batches = _pooled_and_batches(
        method, n_batches, log_fpi_post, log_g_post, log_fpi_g, log_g_g,
        shuffle_rng=shuffle_rng,
    )
    mce = batch_mce(batches) if n_batches >= 2 else math.nan
    report = EstimateReport(
        log_estimate=pooled,
        sign=1.0,
        mce=mce,
        method=f"{method}_{mode}",
        r_used=int(log_fpi_post.shape[0]),
        n_batches=int(n_batches),
        mce_scale="log",
    )
    return BmlRun(
        method=method,
        mode=mode,
        report=report,
        batch_log_estimates=batches,
        batch_mean=float(batches.mean()),
        n_posterior_draws=int(log_fpi_post.shape[0]),
        n_g_draws=int(log_fpi_g.shape[0]) if log_fpi_g is not None else 0,
        posterior_factors=posterior_factors,
        g_factors=g_factors,
    )


# ----------------------------------------------------------------------
# latent trait model bindings
# ----------------------------------------------------------------------

def joint_factor_set(data: Dataset, config: ModelConfig, g: ImportanceFn,
                     intercepts: np.ndarray, loadings: np.ndarray,
                     loadings_free: np.ndarray, latent: np.ndarray) -> JointFactorSet:
    """Evaluate every joint-approach log factor at a set of draws."""
    from .latent import LOG_2PI

    case_ll = joint_case_loglik_draws(intercepts, loadings, latent, data)
    k = latent.shape[2]
    log_prior_z = -0.5 * (latent**2).sum(axis=2) - 0.5 * k * LOG_2PI
    return JointFactorSet(
        case_loglik=case_ll,
        log_prior_latent_cases=log_prior_z,
        log_g_latent_cases=log_g_latent(g, latent),
        log_prior_theta=log_prior_transformed(intercepts, loadings_free, config),
        log_g_theta=log_g_theta(g, intercepts, loadings_free),
    )


def _posterior_quantities(data: Dataset, draws: PosteriorDraws, g: ImportanceFn,
                          mode: str, rule: QuadratureRule | None,
                          use_numba: bool | None):
    config = draws.config
    beta_free = draws.loadings_free()
    if mode == "joint":
        if not g.includes_latent:
            raise ValueError("joint mode requires an importance fn with latent block")
        factors = joint_factor_set(data, config, g, draws.intercepts,
                                   draws.loadings, beta_free, draws.latent)
        return factors.log_fpi, factors.log_g, factors
    if mode == "marginal":
        if rule is None:
            raise ValueError("marginal mode requires a quadrature rule")
        if g.includes_latent:
            raise ValueError("marginal mode requires an importance fn without latent block")
        log_lik = marginal_loglik_draws(draws.intercepts, draws.loadings, data,
                                        rule, use_numba=use_numba)
        log_fpi = log_lik + log_prior_transformed(draws.intercepts, beta_free, config)
        return log_fpi, log_g(g, draws.intercepts, beta_free), None
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _gsample_quantities(data: Dataset, config: ModelConfig, gs: GSample,
                        g: ImportanceFn, mode: str, rule: QuadratureRule | None,
                        use_numba: bool | None):
    if mode == "joint":
        factors = joint_factor_set(data, config, g, gs.intercepts, gs.loadings,
                                   gs.loadings_free, gs.latent)
        return factors.log_fpi, factors.log_g, factors
    log_lik = marginal_loglik_draws(gs.intercepts, gs.loadings, data, rule,
                                    use_numba=use_numba)
    log_fpi = log_lik + log_prior_transformed(gs.intercepts, gs.loadings_free, config)
    return log_fpi, log_g(g, gs.intercepts, gs.loadings_free), None


def rm_estimate(data: Dataset, draws: PosteriorDraws, g: ImportanceFn, mode: str,
                rule: QuadratureRule | None = None, n_batches: int = 50,
                use_numba: bool | None = None, shuffle_rng=None) -> BmlRun:
    """Reciprocal importance estimator from posterior draws."""
    log_fpi, log_g_post, factors = _posterior_quantities(
        data, draws, g, mode, rule, use_numba
    )
    return _assemble_run("rm", mode, n_batches, log_fpi, log_g_post,
                         posterior_factors=factors, shuffle_rng=shuffle_rng)


def bh_estimate(data: Dataset, draws: PosteriorDraws, g_sample: GSample,
                g: ImportanceFn, mode: str, rule: QuadratureRule | None = None,
                n_batches: int = 50, use_numba: bool | None = None,
                shuffle_rng=None) -> BmlRun:
    """Harmonic bridge estimator from posterior draws plus a g-sample."""
    log_fpi, log_g_post, factors = _posterior_quantities(
        data, draws, g, mode, rule, use_numba
    )
    log_fpi_g, log_g_g, g_factors = _gsample_quantities(
        data, draws.config, g_sample, g, mode, rule, use_numba
    )
    return _assemble_run("bh", mode, n_batches, log_fpi, log_g_post,
                         log_fpi_g, log_g_g,
                         posterior_factors=factors, g_factors=g_factors,
                         shuffle_rng=shuffle_rng)


def bg_estimate(data: Dataset, draws: PosteriorDraws, g_sample: GSample,
                g: ImportanceFn, mode: str, rule: QuadratureRule | None = None,
                n_batches: int = 50, use_numba: bool | None = None,
                shuffle_rng=None) -> BmlRun:
    """Geometric bridge estimator from posterior draws plus a g-sample."""
    log_fpi, log_g_post, factors = _posterior_quantities(
        data, draws, g, mode, rule, use_numba
    )
    log_fpi_g, log_g_g, g_factors = _gsample_quantities(
        data, draws.config, g_sample, g, mode, rule, use_numba
    )
    return _assemble_run("bg", mode, n_batches, log_fpi, log_g_post,
                         log_fpi_g, log_g_g,
                         posterior_factors=factors, g_factors=g_factors,
                         shuffle_rng=shuffle_rng)


def batch_report(run: BmlRun) -> dict:
    """One result-table row: pooled estimate, batch mean, batch-based MCE."""
    return {
        "approach": run.mode,
        "estimator": run.method.upper(),
        "pooled_log_estimate": run.report.log_estimate,
        "batch_mean": run.batch_mean,
        "mce": run.report.mce,
    }


# ----------------------------------------------------------------------
# per-case averaged-variable blocks (covariation / CV diagnostics)
# ----------------------------------------------------------------------

def _block_from_log(log_factors: np.ndarray) -> SampleBlock:
    return SampleBlock(np.exp(log_factors))


def joint_integrand_blocks(run: BmlRun) -> tuple[SampleBlock, SampleBlock | None]:
    """Per-case averaged-variable blocks of a joint-mode run.

    Each row multiplies back to the corresponding per-draw summand of the
    estimator's numerator (and denominator where the estimator is a ratio);
    the per-draw scalar pieces are spread evenly over cases as N-th roots.
    """
    if run.mode != "joint":
        raise ValueError("integrand blocks are defined for joint-mode runs")
    post = run.posterior_factors
    if post is None:
        raise ValueError("run carries no stored per-case factors")
    n = post.case_loglik.shape[1]
    if run.method == "rm":
        log_phi = ((post.log_g_theta - post.log_prior_theta)[:, None] / n
                   + post.log_g_latent_cases - post.case_loglik
                   - post.log_prior_latent_cases)
        return _block_from_log(log_phi), None
    gf = run.g_factors
    if gf is None:
        raise ValueError("ratio estimator run carries no g-sample factors")
    if run.method == "bh":
        log_num = -gf.log_g_theta[:, None] / n - gf.log_g_latent_cases
        log_den = (-post.log_prior_theta[:, None] / n
                   - post.case_loglik - post.log_prior_latent_cases)
    elif run.method == "bg":
        def half_log_ratio(fs: JointFactorSet) -> np.ndarray:
            return 0.5 * (fs.case_loglik + fs.log_prior_latent_cases
                          - fs.log_g_latent_cases
                          + (fs.log_prior_theta - fs.log_g_theta)[:, None] / n)
        log_num = half_log_ratio(gf)
        log_den = -half_log_ratio(post)
    else:
        raise ValueError(f"unknown method {run.method!r}")
    return _block_from_log(log_num), _block_from_log(log_den)


def run_tci_diagnostics(run: BmlRun) -> TciDiagnostics:
    """Covariation diagnostics of a joint-mode run's averaged variables."""
    numerator, denominator = joint_integrand_blocks(run)
    return estimator_tci_diagnostics(numerator, denominator)
