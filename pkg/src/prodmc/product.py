"""Joint and marginal estimators of E[prod_i phi_i(Y_i)] and their variances.

Two estimators of the same product-form expectation:

* joint:    average over rows of the row-wise product,
* marginal: product over columns of the column averages (valid under
  independence of the factors).

Both are unbiased; their exact finite-sample variances differ, and every
closed form for that difference lives here.  All estimator arithmetic is
sign-tracked log-sum-exp so blocks of hundreds of factors cannot overflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import MomentSummary, SampleBlock, as_block
from .logspace import SignedLog, log_abs_and_sign, signed_logsumexp


def joint_estimate(block: SampleBlock | np.ndarray) -> SignedLog:
    """Mean over rows of the row products, as a signed log value."""
    block = as_block(block)
    log_abs, signs = log_abs_and_sign(block.values)
    row_logs = log_abs.sum(axis=1)
    row_signs = signs.prod(axis=1)
    total = signed_logsumexp(row_logs, row_signs)
    return SignedLog(total.log_abs - math.log(block.n_replications), total.sign)


def marginal_estimate(block: SampleBlock | np.ndarray) -> SignedLog:
    """Product over columns of the column means, as a signed log value."""
    block = as_block(block)
    log_abs, signs = log_abs_and_sign(block.values)
    col_logs, col_signs = logsumexp(log_abs, b=signs, axis=0, return_sign=True)
    if np.any(col_signs == 0.0):
        return SignedLog(-math.inf, 0.0)
    log_means = col_logs - math.log(block.n_replications)
    return SignedLog(float(log_means.sum()), float(np.prod(col_signs)))


def _scaled_bracket(base: np.ndarray, ratios: np.ndarray) -> float:
    """prod(base) * (prod(1 + ratios) - 1) without catastrophic cancellation.

    When every ratio is small the two products nearly cancel; expm1/log1p
    recovers the difference at full precision.  For large ratios there is no
    cancellation and the plain products are used.
    """
    log_bracket = float(np.log1p(ratios).sum())
    scale = float(np.prod(base))
    if log_bracket > 350.0:
        return float(np.prod(base * (1.0 + ratios)) - scale)
    return scale * math.expm1(log_bracket)


def goodman_product_variance(m: MomentSummary) -> float:
    """Variance of a product of independent factors from per-factor moments.

    prod_i (V_i + E_i^2) - prod_i E_i^2
    """
    if np.any(m.var < 0):
        raise ValueError("variances must be nonnegative")
    e2 = m.mean**2
    if np.any(e2 == 0.0):
        return float(np.prod(m.var + e2))
    return _scaled_bracket(e2, m.var / e2)


def combination_sums(m: MomentSummary) -> np.ndarray:
    """S_k = sum over k-subsets C of prod_{i in C} V_i * prod_{j not in C} E_j^2.

    Returned for k = 0..N.  Computed as the coefficients of
    prod_i (E_i^2 + V_i t), an O(N^2) convolution; equals explicit subset
    enumeration (see :func:`subset_enumeration_variance`) but scales past
    N = 12.
    """
    coeffs = np.array([1.0])
    for e2, v in zip(m.mean**2, m.var):
        coeffs = np.convolve(coeffs, np.array([e2, v]))
    return coeffs


def subset_enumeration_variance(m: MomentSummary) -> float:
    """Product-of-factors variance by explicit subset enumeration (N <= 12).

    Brute-force oracle for the closed product form: sums
    prod_C V * prod_{~C} E^2 over every nonempty subset C.
    """
    n = m.n_factors
    if n > 12:
        raise ValueError("subset enumeration capped at N = 12")
    e2 = m.mean**2
    v = m.var
    total = 0.0
    indices = range(n)
    for k in range(1, n + 1):
        for combo in itertools.combinations(indices, k):
            inside = set(combo)
            term = 1.0
            for i in indices:
                term *= v[i] if i in inside else e2[i]
            total += term
    return total


@dataclass(frozen=True)
class VarianceBreakdown:
    """Exact variances of the two estimators plus their k-indexed terms.

    ``higher_order_terms[k-2]`` holds the raw combination sum S_k for
    k = 2..N; the joint estimator damps each by 1/R, the marginal by 1/R^k.
    ``first_order_term`` (S_1/R) is common to both estimators.
    """

    var_joint: float
    var_marginal: float
    difference: float
    first_order_term: float
    higher_order_terms: np.ndarray
    r_used: int


def estimator_variances(m: MomentSummary, r: int) -> VarianceBreakdown:
    """Closed-form variances of the joint and marginal estimators at size R."""
    if r < 1:
        raise ValueError("R must be >= 1")
    e2 = m.mean**2
    var_joint = goodman_product_variance(m) / r
    if np.any(e2 == 0.0):
        var_marginal = float(np.prod(m.var / r + e2))
    else:
        var_marginal = _scaled_bracket(e2, m.var / (r * e2))
    sums = combination_sums(m)
    return VarianceBreakdown(
        var_joint=var_joint,
        var_marginal=var_marginal,
        difference=var_joint - var_marginal,
        first_order_term=float(sums[1] / r) if m.n_factors >= 1 else 0.0,
        higher_order_terms=sums[2:].copy(),
        r_used=int(r),
    )


def variance_cv_form(m: MomentSummary, r: int, which: str) -> float:
    """Estimator variance via the coefficient-of-variation product form.

    Three cases by the zero-mean set: all means zero, no means zero, mixed.
    Algebraically identical to :func:`estimator_variances`; kept as an
    independent evaluation route.
    """
    if which not in ("joint", "marginal"):
        raise ValueError(f"which must be 'joint' or 'marginal', got {which!r}")
    if r < 1:
        raise ValueError("R must be >= 1")
    zero = m.zero_mean
    nonzero = ~zero
    n_zero = int(np.count_nonzero(zero))
    v_zero_prod = float(np.prod(m.var[zero])) if n_zero else 1.0
    e2 = m.mean[nonzero] ** 2
    cv2 = m.cv[nonzero] ** 2
    damping = 1.0 if which == "joint" else float(r)
    if n_zero == 0:
        # the -1 indicator is active: evaluate the near-cancelling bracket stably
        bracket_scaled = _scaled_bracket(e2, cv2 / damping)
    else:
        bracket_scaled = float(np.prod(e2 * (cv2 / damping + 1.0)))
    if which == "joint":
        return (1.0 / r) * v_zero_prod * bracket_scaled
    return (1.0 / r**n_zero) * v_zero_prod * bracket_scaled


def variance_difference(m: MomentSummary, r: int) -> float:
    """var_joint - var_marginal via the k-indexed closed form.

    (1/R) * sum_{k=2..N} (1 - R^{1-k}) S_k; zero when N = 1 or R = 1.
    """
    if r < 1:
        raise ValueError("R must be >= 1")
    n = m.n_factors
    if n < 2:
        return 0.0
    sums = combination_sums(m)
    ks = np.arange(2, n + 1, dtype=np.float64)
    weights = 1.0 - float(r) ** (1.0 - ks)
    return float((weights * sums[2:]).sum() / r)


def required_iterations(r_marginal: int, m: MomentSummary) -> float:
    """Joint-estimator sample size matching the marginal estimator's error.

    Returns R_J = R_M^{n_zero} * omega as a real number (callers round up).
    omega depends on the zero-mean set:

    * all means zero:  omega = R_M^(N - n_zero)  (so R_J = R_M^N),
    * no means zero:   omega = (prod(CV^2+1) - 1) / (prod(CV^2/R_M + 1) - 1),
    * mixed:           omega = prod over nonzero means of
                       (CV^2+1)/(CV^2/R_M + 1).
    """
    if r_marginal < 2:
        raise ValueError("R_M must be >= 2")
    if not np.any(m.var > 0):
        raise ValueError("both variances zero: accuracy matching is degenerate")
    n = m.n_factors
    n_zero = m.n_zero_mean
    cv2 = m.cv[~m.zero_mean] ** 2
    rm = float(r_marginal)
    if n_zero == n:
        omega = rm ** (n - n_zero)
    elif n_zero == 0:
        omega = (float(np.prod(cv2 + 1.0)) - 1.0) / (float(np.prod(cv2 / rm + 1.0)) - 1.0)
    else:
        omega = float(np.prod((cv2 + 1.0) / (cv2 / rm + 1.0)))
    return rm**n_zero * omega
