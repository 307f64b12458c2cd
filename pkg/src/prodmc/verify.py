"""Self-contained verification suites behind the ``verify`` CLI command.

Every closed form in the package is checked against an independent route:
explicit subset enumeration for the variance combinatorics, brute-force
sample moments for the covariation identities, factorial moments for the
quadrature rules, and a fully conjugate Gaussian hierarchy with analytic
evidence for the three estimators.  Each check prints one line with its
tolerance and outcome.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import covariation, product
from .conjugate import ConjugateModel, conjugate_estimates
from .core import batch_mce, make_streams, moments, summary_from_moments
from .quadrature import expect, gauss_hermite, tensor_rule


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / scale


def _random_moment_summary(rng: np.random.Generator):
    n = int(rng.integers(1, 9))
    mean = rng.uniform(-2.0, 2.0, size=n)
    mean[rng.random(n) < 0.25] = 0.0
    var = rng.uniform(0.0, 3.0, size=n)
    return summary_from_moments(mean, var, zero_tol=0.0)


# ----------------------------------------------------------------------
# individual checks; each returns (passed, detail)
# ----------------------------------------------------------------------

def check_moment_reconstruction() -> tuple[bool, str]:
    rng = make_streams(2024_01).stream(0)
    worst = 0.0
    for _ in range(200):
        r = int(rng.integers(1, 60))
        n = int(rng.integers(1, 12))
        block = rng.standard_normal((r, n)) * rng.uniform(0.1, 5.0)
        m = moments(block)
        recon = ((block - m.mean) ** 2).mean(axis=0)
        worst = max(worst, float(np.max(np.abs(recon - m.var))))
    return worst <= 1e-12, f"max abs deviation {worst:.2e} (tol 1e-12)"


def check_batch_permutation() -> tuple[bool, str]:
    rng = make_streams(2024_02).stream(0)
    logs = rng.standard_normal(50)
    a = batch_mce(logs)
    b = batch_mce(logs[rng.permutation(50)])
    return a == b, f"|sd - permuted sd| = {abs(a - b):.2e} (tol exact)"


def check_bernoulli_closed_forms() -> tuple[bool, str]:
    m = summary_from_moments([0.5, 0.5], [0.25, 0.25], zero_tol=0.0)
    vb = product.estimator_variances(m, 100)
    e1 = _rel_err(vb.var_joint, 1.875e-3)
    e2 = _rel_err(vb.var_marginal, 1.25625e-3)
    return max(e1, e2) <= 1e-12, (
        f"joint rel err {e1:.2e}, marginal rel err {e2:.2e} (tol 1e-12)"
    )


def check_cv_form_equivalence() -> tuple[bool, str]:
    rng = make_streams(2024_03).stream(0)
    worst = 0.0
    for _ in range(1000):
        m = _random_moment_summary(rng)
        r = int(rng.integers(2, 1000))
        vb = product.estimator_variances(m, r)
        worst = max(worst,
                    _rel_err(product.variance_cv_form(m, r, "joint"), vb.var_joint),
                    _rel_err(product.variance_cv_form(m, r, "marginal"), vb.var_marginal))
    return worst <= 1e-12, f"max rel err {worst:.2e} over 1000 configs (tol 1e-12)"


def check_difference_equivalence() -> tuple[bool, str]:
    rng = make_streams(2024_04).stream(0)
    worst = 0.0
    for _ in range(1000):
        m = _random_moment_summary(rng)
        r = int(rng.integers(2, 1000))
        vb = product.estimator_variances(m, r)
        diff = product.variance_difference(m, r)
        scale = max(abs(vb.var_joint), abs(vb.var_marginal), 1e-300)
        worst = max(worst, abs(diff - (vb.var_joint - vb.var_marginal)) / scale)
    return worst <= 1e-12, f"max rel err {worst:.2e} over 1000 configs (tol 1e-12)"


def check_subset_enumeration() -> tuple[bool, str]:
    rng = make_streams(2024_05).stream(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 13))
        mean = rng.uniform(-2.0, 2.0, size=n)
        var = rng.uniform(0.0, 2.0, size=n)
        m = summary_from_moments(mean, var, zero_tol=0.0)
        worst = max(worst, _rel_err(product.subset_enumeration_variance(m),
                                    product.goodman_product_variance(m)))
    return worst <= 1e-12, f"max rel err {worst:.2e}, N up to 12 (tol 1e-12)"


def check_iteration_matching() -> tuple[bool, str]:
    m_zero = summary_from_moments([0.0, 0.0, 0.0], [1.0, 2.0, 0.5], zero_tol=0.0)
    rj_zero = product.required_iterations(10, m_zero)
    m_cv = summary_from_moments([1.0, 1.0], [1.0, 1.0], zero_tol=0.0)
    rj_cv = product.required_iterations(10, m_cv)
    ok = _rel_err(rj_zero, 1000.0) <= 1e-12 and _rel_err(rj_cv, 3.0 / 0.21) <= 1e-12
    return ok, f"zero-mean R_J {rj_zero:.6g} (want 1000), CV case {rj_cv:.6g} (want {3/0.21:.6g})"


def _random_block(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    r = int(rng.integers(3, 40))
    if n is None:
        n = int(rng.integers(2, 9))
    kind = rng.integers(0, 3)
    if kind == 0:
        return rng.standard_normal((r, n)) + rng.uniform(-1, 1, size=n)
    if kind == 1:
        return rng.uniform(-1.0, 2.0, size=(r, n))
    return rng.integers(-2, 3, size=(r, n)).astype(float)


def decomposition_error_scale(values: np.ndarray, direct: float,
                              decomposed: float, cov_terms: np.ndarray) -> float:
    """Magnitude against which the decomposition's fp error is measured.

    Either route accumulates rounding proportional to the absolute sizes of
    its summands: row products for the direct difference, mean-weighted
    partial covariances for the recursion.
    """
    n = values.shape[1]
    col_means = values.mean(axis=0)
    contributions = abs(cov_terms[-1])
    for k in range(1, n - 1):
        weight = abs(float(np.prod(col_means[n - k:])))
        contributions += weight * abs(cov_terms[(n - k) - 2])
    return max(abs(direct), abs(decomposed), contributions,
               float(np.abs(values.prod(axis=1)).max()), 1e-30)


def check_tci_decomposition() -> tuple[bool, str]:
    rng = make_streams(2024_06).stream(0)
    worst = 0.0
    for _ in range(500):
        block = _random_block(rng)
        direct = covariation.tci_sample(block)
        decomposed, cov_terms = covariation.tci_decomposition(block)
        scale = decomposition_error_scale(block, direct, decomposed, cov_terms)
        worst = max(worst, abs(direct - decomposed) / scale)
    return worst <= 1e-10, f"max rel gap {worst:.2e} over 500 blocks (tol 1e-10)"


def check_variance_underestimation() -> tuple[bool, str]:
    rng = make_streams(2024_07).stream(0)
    worst = 0.0
    for _ in range(500):
        block = _random_block(rng)
        true_var, indep_var, tci = covariation.variance_underestimation(block)
        scale = max(abs(true_var), abs(indep_var), 1e-30)
        worst = max(worst, abs(true_var - (indep_var - tci**2)) / scale)
    return worst <= 1e-10, f"max rel gap {worst:.2e} over 500 blocks (tol 1e-10)"


def check_cauchy_schwarz_bound() -> tuple[bool, str]:
    rng = make_streams(2024_08).stream(0)
    worst = -math.inf
    for _ in range(500):
        block = _random_block(rng)
        tci = covariation.tci_sample(block)
        m = moments(block, zero_tol=0.0)
        bound = covariation.tci_bound(m, covariation.partial_product_variances(block))
        worst = max(worst, abs(tci) - bound * (1 + 1e-10) - 1e-12)
    return worst <= 0.0, f"max |tci| excess over bound {worst:.2e} (tol 0)"


def check_population_independence() -> tuple[bool, str]:
    rng = make_streams(2024_09).stream(0)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 5))
        supports, probs, means = [], [], []
        for _ in range(n):
            k = int(rng.integers(2, 5))
            support = rng.uniform(-1.0, 2.0, size=k)
            p = rng.dirichlet(np.ones(k))
            supports.append(support)
            probs.append(p)
            means.append(float(support @ p))
        joint_mean = 0.0
        for combo in itertools.product(*[range(len(s)) for s in supports]):
            w = 1.0
            v = 1.0
            for i, c in enumerate(combo):
                w *= probs[i][c]
                v *= supports[i][c]
            joint_mean += w * v
        tci = joint_mean - float(np.prod(means))
        worst = max(worst, abs(tci) / max(abs(joint_mean), 1e-30))
    return worst <= 1e-13, f"max |population tci| {worst:.2e} (tol 1e-13)"


DOUBLE_FACTORIALS = {0: 1.0, 2: 1.0, 4: 3.0, 6: 15.0, 8: 105.0, 10: 945.0,
                     12: 10395.0, 14: 135135.0, 16: 2027025.0, 18: 34459425.0}


def check_normal_moments() -> tuple[bool, str]:
    worst = 0.0
    for order in (1, 2, 3, 5, 10, 21, 41, 64, 100):
        rule = gauss_hermite(order)
        for degree in range(0, min(2 * order - 1, 18) + 1, 2):
            got = expect(rule, lambda x, d=degree: x**d)
            worst = max(worst, _rel_err(got, DOUBLE_FACTORIALS[degree]))
    rule10 = gauss_hermite(10)
    fourth = expect(rule10, lambda x: x**4)
    ok = worst <= 1e-9 and abs(fourth - 3.0) <= 1e-10
    return ok, (f"max rel moment err {worst:.2e} (tol 1e-9); "
                f"order-10 fourth moment {fourth:.12f} (tol 1e-10)")


def check_tensor_moments() -> tuple[bool, str]:
    rule = tensor_rule(gauss_hermite(8), 2)
    got = expect(rule, lambda xy: xy[:, 0] ** 2 * xy[:, 1] ** 2)
    ones = expect(rule, lambda xy: np.ones(xy.shape[0]))
    ok = abs(got - 1.0) <= 1e-10 and abs(ones - 1.0) <= 1e-12
    return ok, f"E[Z1^2 Z2^2] = {got:.12f} (tol 1e-10), weight sum {ones:.12f}"


def check_conjugate_recovery() -> tuple[bool, str]:
    rng = make_streams(2024_10).stream(0)
    model = ConjugateModel(obs=rng.normal(0.4, 1.2, size=12), obs_sd=1.0,
                           group_sd=0.8, prior_mean=0.0, prior_sd=1.5)
    truth = model.log_evidence()
    runs = conjugate_estimates(model, n_draws=20_000,
                               rng=make_streams(2024_10).stream(1),
                               n_batches=20)
    details = []
    ok = True
    for (method, mode), run in sorted(runs.items()):
        gap = abs(run.log_estimate - truth)
        limit = 3.0 * run.mce
        ok = ok and gap <= limit
        details.append(f"{method}_{mode}: |err| {gap:.3f} vs 3*MCE {limit:.3f}")
    return ok, "; ".join(details)


SUITES: dict[str, list[tuple[str, Callable[[], tuple[bool, str]]]]] = {
    "moments": [
        ("moment-reconstruction", check_moment_reconstruction),
        ("batch-mce-permutation", check_batch_permutation),
    ],
    "variances": [
        ("bernoulli-closed-forms", check_bernoulli_closed_forms),
        ("cv-form-equivalence", check_cv_form_equivalence),
        ("difference-equivalence", check_difference_equivalence),
        ("subset-enumeration", check_subset_enumeration),
        ("iteration-matching", check_iteration_matching),
    ],
    "covariation": [
        ("tci-decomposition", check_tci_decomposition),
        ("variance-underestimation", check_variance_underestimation),
        ("cauchy-schwarz-bound", check_cauchy_schwarz_bound),
        ("population-independence", check_population_independence),
    ],
    "quadrature": [
        ("normal-moments", check_normal_moments),
        ("tensor-moments", check_tensor_moments),
    ],
    "conjugate": [
        ("evidence-recovery", check_conjugate_recovery),
    ],
}


def run_suite(tag: str, printer=print) -> list[CheckResult]:
    """Run one named suite (or 'all'); prints one line per check."""
    if tag == "all":
        names = list(SUITES)
    elif tag in SUITES:
        names = [tag]
    else:
        raise ValueError(f"unknown suite {tag!r}; choose from "
                         f"{['all'] + sorted(SUITES)}")
    results = []
    for suite in names:
        for name, fn in SUITES[suite]:
            try:
                passed, detail = fn()
            except Exception as exc:  # a crashed check is a failed check
                passed, detail = False, f"raised {type(exc).__name__}: {exc}"
            results.append(CheckResult(suite, name, passed, detail))
            status = "PASS" if passed else "FAIL"
            printer(f"[{status}] {suite}/{name}: {detail}")
    return results
