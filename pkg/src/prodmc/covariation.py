"""Total covariation: a multivariate extension of covariance.

The gap between the joint and marginal estimates of a product-form mean is
exactly the sample's total covariation -- the multivariate analogue of
covariance, zero in population for independent factors but never exactly
zero in a finite sample.  This module computes the index directly, through
its recursive covariance decomposition, bounds it by Cauchy-Schwarz, and
quantifies how it makes the naive variance of a row-product sample
underestimate the truth.

Everything here uses divisor-R sample moments: the decomposition and the
variance-underestimation identity are exact algebraic identities with that
divisor and fail by O(1/R) terms with divisor R-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MomentSummary, SampleBlock, as_block, moments
from .logspace import signed_sub
from .product import joint_estimate, marginal_estimate


def tci_sample(block: SampleBlock | np.ndarray) -> float:
    """Sample total covariation: joint estimate minus marginal estimate.

    Linear divisor-R sample arithmetic, so the decomposition, bound, and
    variance identities below hold to floating-point exactness.  For blocks
    whose row products leave double range, take the log-space estimates from
    :mod:`prodmc.product` instead.
    """
    block = as_block(block)
    products = block.values.prod(axis=1)
    return float(products.mean() - block.values.mean(axis=0).prod())


def cov_partial(block: SampleBlock | np.ndarray, k: int) -> float:
    """Divisor-R covariance of the product of columns 1..k-1 with column k.

    Columns are 1-indexed; k = 2 gives the ordinary sample covariance of the
    first two columns.
    """
    block = as_block(block)
    n = block.n_factors
    if k < 2 or k > n:
        raise ValueError(f"k must be in [2, {n}], got {k}")
    values = block.values
    prefix = values[:, : k - 1].prod(axis=1)
    last = values[:, k - 1]
    return float((prefix * last).mean() - prefix.mean() * last.mean())


def tci_decomposition(block: SampleBlock | np.ndarray) -> tuple[float, np.ndarray]:
    """Total covariation as a mean-weighted sum of partial covariances.

    Returns ``(tci, cov_terms)`` where ``cov_terms[k-2]`` is the partial
    covariance Cov(prod_{i<k} Y_i, Y_k) for k = 2..N and

        tci = Cov_(N) + sum_{k=1}^{N-2} [prod_{i=N-k+1}^{N} mean_i] Cov_(N-k).

    Must equal :func:`tci_sample` up to floating-point error; requires N >= 2.
    """
    block = as_block(block)
    n = block.n_factors
    if n < 2:
        raise ValueError("decomposition needs at least 2 factors")
    col_means = block.values.mean(axis=0)
    cov_terms = np.array([cov_partial(block, k) for k in range(2, n + 1)])
    total = cov_terms[-1]
    for k in range(1, n - 1):
        weight = float(np.prod(col_means[n - k:]))
        total += weight * cov_terms[(n - k) - 2]
    return float(total), cov_terms


def partial_product_variances(block: SampleBlock | np.ndarray) -> np.ndarray:
    """Divisor-R variances of the leading-column products, j = 1..N-1."""
    block = as_block(block)
    prods = np.cumprod(block.values, axis=1)
    return prods[:, :-1].var(axis=0)


def tci_bound(m: MomentSummary, partial_variances: np.ndarray) -> float:
    """Cauchy-Schwarz upper bound on |total covariation|.

    ``partial_variances[j-1]`` must be the divisor-R variance of the product
    of the first j columns, for j = 1..N-1.  The bound is

        sum_{k=0}^{N-2} [prod_{i=N+1-k}^{N+1} |mean_i|]
                        * sqrt(Var(prod_{j<=N-k-1} Y_j) * Var(Y_{N-k}))

    with the convention mean_{N+1} = 1.
    """
    partial_variances = np.asarray(partial_variances, dtype=np.float64)
    n = m.n_factors
    if partial_variances.shape != (n - 1,):
        raise ValueError(f"need N-1 = {n - 1} partial product variances")
    if np.any(partial_variances < 0) or np.any(m.var < 0):
        raise ValueError("variances must be nonnegative")
    abs_mean = np.abs(m.mean)
    total = 0.0
    for k in range(0, n - 1):
        # trailing means N+1-k .. N+1 (1-indexed); mean_{N+1} = 1
        weight = float(np.prod(abs_mean[n - k:]))
        total += weight * math.sqrt(partial_variances[n - k - 2] * m.var[n - k - 1])
    return total


def variance_underestimation(block: SampleBlock | np.ndarray) -> tuple[float, float, float]:
    """(true variance, assumed-independence variance, tci) of row products.

    True variance centers the row products on the joint estimate, the
    assumed-independence variance centers them on the marginal estimate;
    with divisor-R moments they satisfy exactly

        true = independence - tci**2,

    so nonzero sample covariation makes the independence-centered spread
    overstate -- and the joint estimator's naive error understate -- the truth.
    """
    block = as_block(block)
    products = block.values.prod(axis=1)
    joint = products.mean()
    col_means = block.values.mean(axis=0)
    marginal = float(np.prod(col_means))
    true_var = float(((products - joint) ** 2).mean())
    indep_var = float(((products - marginal) ** 2).mean())
    return true_var, indep_var, float(joint - marginal)


def tci_prefix_curve(block: SampleBlock | np.ndarray,
                     r_schedule) -> list[tuple[int, float]]:
    """Sample total covariation on growing replication prefixes.

    The number of replications needed before the covariation effect dies
    out is not predictable a priori; this reports tci at each requested
    prefix size so its decay toward zero can be inspected directly.
    """
    block = as_block(block)
    out = []
    for r in r_schedule:
        if r < 1 or r > block.n_replications:
            raise ValueError(f"prefix size {r} outside [1, {block.n_replications}]")
        out.append((int(r), tci_sample(block.values[:r])))
    return out


@dataclass(frozen=True)
class TciReport:
    """Sample total covariation with its decomposition, bound, and variances."""

    tci_direct: float
    tci_decomposed: float
    cov_terms: np.ndarray
    bound: float
    indep_variance: float
    true_variance: float


def tci_report(block: SampleBlock | np.ndarray) -> TciReport:
    """Assemble every covariation diagnostic for one sample block."""
    block = as_block(block)
    decomposed, cov_terms = tci_decomposition(block)
    m = moments(block, zero_tol=0.0)
    bound = tci_bound(m, partial_product_variances(block))
    true_var, indep_var, tci = variance_underestimation(block)
    return TciReport(
        tci_direct=tci,
        tci_decomposed=decomposed,
        cov_terms=cov_terms,
        bound=bound,
        indep_variance=indep_var,
        true_variance=true_var,
    )


@dataclass(frozen=True)
class TciDiagnostics:
    """Covariation effect of a ratio estimator's averaged variables.

    ``net_log_effect`` is the log-scale gap (joint minus marginal log
    estimate) of the numerator block net of the denominator block's gap;
    for a single-block estimator it is the numerator gap itself.  Ratio
    estimators whose numerator and denominator carry similar sample
    covariation see the two gaps cancel.
    """

    tci_numerator: float
    tci_denominator: float | None
    log_gap_numerator: float
    log_gap_denominator: float | None
    net_log_effect: float


def _gap_and_tci(block: SampleBlock) -> tuple[float, float]:
    """Log-scale joint-vs-marginal gap and the (possibly saturating) tci.

    Runs in signed-log space so blocks whose row products leave double range
    still yield a finite gap; the linear tci saturates to +-inf there.
    """
    joint = joint_estimate(block)
    marginal = marginal_estimate(block)
    if joint.sign <= 0 or marginal.sign <= 0:
        raise ValueError("log-scale gap requires strictly positive estimates")
    return joint.log_abs - marginal.log_abs, signed_sub(joint, marginal).value


def estimator_tci_diagnostics(
    numerator_block: SampleBlock | np.ndarray,
    denominator_block: SampleBlock | np.ndarray | None = None,
) -> TciDiagnostics:
    """Covariation diagnostics for the averaged variables of an estimator."""
    numerator_block = as_block(numerator_block)
    gap_num, tci_num = _gap_and_tci(numerator_block)
    if denominator_block is None:
        return TciDiagnostics(
            tci_numerator=tci_num,
            tci_denominator=None,
            log_gap_numerator=gap_num,
            log_gap_denominator=None,
            net_log_effect=gap_num,
        )
    denominator_block = as_block(denominator_block)
    gap_den, tci_den = _gap_and_tci(denominator_block)
    return TciDiagnostics(
        tci_numerator=tci_num,
        tci_denominator=tci_den,
        log_gap_numerator=gap_num,
        log_gap_denominator=gap_den,
        net_log_effect=gap_num - gap_den,
    )
