"""Nested Monte Carlo under conditional independence.

The factors phi_i(u_i, v) share a common variable v and are independent
only conditionally on it.  The joint estimator averages row products of
jointly drawn (u, v); the marginal estimator runs a nested experiment:
R1 outer draws of v, R2 inner draws of each u_i | v, averaging the inner
factor means before taking the product.  When the conditional means are
known analytically the inner loop can be replaced by them exactly
(``r_inner=0``), which removes the inner-variance part of the error
entirely.

Both estimators share an O(1/R_outer) variance floor from v itself; the
remaining variance terms are damped by R2^k for the nested estimator.  No
budget optimization is attempted here: the module reports, it does not
choose (R1, R2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EstimateReport
from .logspace import log_abs_and_sign, signed_logsumexp
from .product import subset_enumeration_variance
from .core import summary_from_moments


@dataclass(frozen=True)
class HierarchicalModel:
    """Sampler/evaluator bundle for conditionally independent factors.

    ``draw_shared(rng, size)`` returns the shared variable with leading
    dimension ``size``; ``draw_conditional(rng, i, v)`` returns one draw of
    u_i per element of v (leading dimensions match); ``evaluate(i, u, v)``
    is the deterministic factor phi_i, vectorized over the leading
    dimension.  ``conditional_mean`` / ``conditional_var`` are optional
    analytic E(phi_i | v) and V(phi_i | v), each mapping (i, v) to an array
    over v.
    """

    n_factors: int
    draw_shared: Callable
    draw_conditional: Callable
    evaluate: Callable
    conditional_mean: Callable | None = None
    conditional_var: Callable | None = None

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("need at least one factor")


def _signed_mean_report(products: np.ndarray, method: str, r_used: int) -> EstimateReport:
    log_abs, signs = log_abs_and_sign(products)
    total = signed_logsumexp(log_abs, signs)
    log_estimate = total.log_abs - math.log(products.size)
    se = float(np.std(products, ddof=1) / math.sqrt(products.size)) if products.size > 1 else 0.0
    return EstimateReport(
        log_estimate=log_estimate,
        sign=total.sign,
        mce=se,
        method=method,
        r_used=r_used,
        n_batches=0,
        mce_scale="linear",
    )


def nested_joint(model: HierarchicalModel, r: int,
                 rng: np.random.Generator) -> EstimateReport:
    """Average of row products over r joint draws of (u, v)."""
    if r < 1:
        raise ValueError("r must be >= 1")
    v = model.draw_shared(rng, r)
    factors = np.empty((r, model.n_factors))
    for i in range(model.n_factors):
        u = model.draw_conditional(rng, i, v)
        factors[:, i] = model.evaluate(i, u, v)
    products = factors.prod(axis=1)
    return _signed_mean_report(products, "nested_joint", r)


def nested_marginal(model: HierarchicalModel, r_outer: int, r_inner: int,
                    rng: np.random.Generator) -> EstimateReport:
    """Nested estimator: r_outer draws of v, r_inner draws of each u_i | v.

    ``r_inner=0`` substitutes the analytic conditional means for the inner
    averages (requires ``model.conditional_mean``).
    """
    if r_outer < 1:
        raise ValueError("r_outer must be >= 1")
    if r_inner < 0:
        raise ValueError("r_inner must be >= 0")
    v = model.draw_shared(rng, r_outer)
    factor_means = np.empty((r_outer, model.n_factors))
    if r_inner == 0:
        if model.conditional_mean is None:
            raise ValueError("r_inner=0 requires analytic conditional means")
        for i in range(model.n_factors):
            factor_means[:, i] = model.conditional_mean(i, v)
    else:
        v_rep = np.repeat(v, r_inner, axis=0)
        for i in range(model.n_factors):
            u = model.draw_conditional(rng, i, v_rep)
            values = model.evaluate(i, u, v_rep)
            factor_means[:, i] = values.reshape(r_outer, r_inner).mean(axis=1)
    products = factor_means.prod(axis=1)
    return _signed_mean_report(products, "nested_marginal", r_outer)


@dataclass(frozen=True)
class ConditionalVarianceReport:
    """Formula-based estimator variances, with outer-MC standard errors.

    ``shared_term`` is the common O(1/R_outer) contribution from the shared
    variable, reported before division by the respective outer sizes.
    """

    var_joint: float
    var_marginal: float
    shared_term: float
    inner_term_joint: float
    inner_term_marginal: float
    se_var_joint: float
    se_var_marginal: float
    v_sample_size: int


def _conditional_moments(model: HierarchicalModel, v, rng,
                         inner_moment_draws: int) -> tuple[np.ndarray, np.ndarray]:
    size = np.shape(v)[0]
    n = model.n_factors
    cond_mean = np.empty((size, n))
    cond_var = np.empty((size, n))
    if model.conditional_mean is not None and model.conditional_var is not None:
        for i in range(n):
            cond_mean[:, i] = model.conditional_mean(i, v)
            cond_var[:, i] = model.conditional_var(i, v)
        return cond_mean, cond_var
    if inner_moment_draws < 2:
        raise ValueError(
            "no analytic conditional moments; pass inner_moment_draws >= 2"
        )
    v_rep = np.repeat(v, inner_moment_draws, axis=0)
    for i in range(n):
        u = model.draw_conditional(rng, i, v_rep)
        values = model.evaluate(i, u, v_rep).reshape(size, inner_moment_draws)
        cond_mean[:, i] = values.mean(axis=1)
        cond_var[:, i] = values.var(axis=1, ddof=1)
    return cond_mean, cond_var


def cond_variance_formulas(
    model: HierarchicalModel,
    r_joint: int,
    r_outer: int,
    r_inner: int,
    v_sample_size: int,
    rng: np.random.Generator,
    inner_moment_draws: int = 0,
    enumerate_subsets: bool = False,
) -> ConditionalVarianceReport:
    """Estimate both estimators' variances from the conditional-moment forms.

    The shared term Var_v[prod_i E(phi_i|v)] and the inner expectation terms
    are estimated by outer Monte Carlo over ``v_sample_size`` draws of v
    (plug-in, divisor R).  The inner combinatorial sums are evaluated through
    the closed product form by default; ``enumerate_subsets=True`` switches
    to explicit subset enumeration (capped at 12 factors) as a cross-check.
    """
    if v_sample_size < 2:
        raise ValueError("v_sample_size must be >= 2")
    if r_inner < 1:
        raise ValueError("r_inner must be >= 1 for the variance formula")
    v = model.draw_shared(rng, v_sample_size)
    cond_mean, cond_var = _conditional_moments(model, v, rng, inner_moment_draws)

    mean_products = cond_mean.prod(axis=1)
    shared_term = float(mean_products.var(ddof=0))
    # delta-method standard error of the plug-in variance
    centered_sq = (mean_products - mean_products.mean()) ** 2
    se_shared = float(np.std(centered_sq, ddof=1) / math.sqrt(v_sample_size))

    e2 = cond_mean**2
    if enumerate_subsets:
        if model.n_factors > 12:
            raise ValueError("subset enumeration capped at 12 factors")
        inner_joint_by_v = np.array([
            subset_enumeration_variance(
                summary_from_moments(cond_mean[s], cond_var[s])
            )
            for s in range(v_sample_size)
        ])
        inner_marg_by_v = np.array([
            subset_enumeration_variance(
                summary_from_moments(cond_mean[s], cond_var[s] / r_inner)
            )
            for s in range(v_sample_size)
        ])
    else:
        inner_joint_by_v = (cond_var + e2).prod(axis=1) - e2.prod(axis=1)
        inner_marg_by_v = (cond_var / r_inner + e2).prod(axis=1) - e2.prod(axis=1)

    inner_joint = float(inner_joint_by_v.mean())
    inner_marg = float(inner_marg_by_v.mean())
    se_inner_joint = float(np.std(inner_joint_by_v, ddof=1) / math.sqrt(v_sample_size))
    se_inner_marg = float(np.std(inner_marg_by_v, ddof=1) / math.sqrt(v_sample_size))

    var_joint = (shared_term + inner_joint) / r_joint
    var_marginal = (shared_term + inner_marg) / r_outer
    return ConditionalVarianceReport(
        var_joint=var_joint,
        var_marginal=var_marginal,
        shared_term=shared_term,
        inner_term_joint=inner_joint,
        inner_term_marginal=inner_marg,
        se_var_joint=math.hypot(se_shared, se_inner_joint) / r_joint,
        se_var_marginal=math.hypot(se_shared, se_inner_marg) / r_outer,
        v_sample_size=v_sample_size,
    )


@dataclass(frozen=True)
class FactorCvSummary:
    """Distribution over v of the conditional coefficient of variation."""

    factor: int
    cv_min: float
    cv_median: float
    cv_max: float
    n_flagged: int  # (factor, v) pairs with conditional mean ~ 0, excluded


def cond_cv_diagnostics(model: HierarchicalModel, v,
                        zero_tol: float = 1e-12) -> list[FactorCvSummary]:
    """Min/median/max over v of CV(phi_i | v) per factor.

    Pairs where the conditional mean vanishes (|mean| <= zero_tol relative
    to the factor's largest conditional mean) are flagged and excluded.
    """
    if model.conditional_mean is None or model.conditional_var is None:
        raise ValueError("conditional CV diagnostics need analytic moments")
    out = []
    for i in range(model.n_factors):
        means = np.asarray(model.conditional_mean(i, v), dtype=np.float64)
        variances = np.asarray(model.conditional_var(i, v), dtype=np.float64)
        scale = float(np.max(np.abs(means))) if means.size else 0.0
        flagged = np.abs(means) <= zero_tol * scale
        cv = np.sqrt(variances[~flagged]) / np.abs(means[~flagged])
        if cv.size == 0:
            out.append(FactorCvSummary(i, math.nan, math.nan, math.nan,
                                       int(flagged.sum())))
        else:
            out.append(FactorCvSummary(
                factor=i,
                cv_min=float(cv.min()),
                cv_median=float(np.median(cv)),
                cv_max=float(cv.max()),
                n_flagged=int(flagged.sum()),
            ))
    return out
