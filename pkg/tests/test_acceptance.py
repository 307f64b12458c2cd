"""Acceptance suite: one test per release criterion, printed as it runs.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion.  Each criterion pins its tolerance here; nothing is deferred to
later calibration.  ``test_gllvm_rm_joint_marginal_separation`` is a known
red: the separation phenomenon it demands does not reach the stated
threshold at the pinned desk scale (see the test docstring).
"""

import math
import time

import numpy as np
import pytest

from prodmc.conjugate import ConjugateModel, conjugate_estimates
from prodmc.core import as_block, make_streams, moments, summary_from_moments
from prodmc.covariation import (partial_product_variances, tci_bound,
                                tci_decomposition, tci_sample,
                                variance_underestimation)
from prodmc.experiments import (BetaProductConfig, GllvmConfig,
                                beta_product_rows, gllvm_results, write_csv,
                                BETA_PRODUCT_COLUMNS, GLLVM_TABLE_COLUMNS)
from prodmc.latent import marginal_case_loglik, simulate_dataset
from prodmc.verify import decomposition_error_scale
from prodmc.product import (estimator_variances, goodman_product_variance,
                            required_iterations, subset_enumeration_variance,
                            variance_cv_form, variance_difference)
from prodmc.quadrature import expect, gauss_hermite

ACCEPTANCE_SEED = 1


def report(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


# ----------------------------------------------------------------------
# Beta product study (shared runs)
# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def beta_tables():
    """Marginal/joint estimates at R=250,000 with 25 batches of 10,000."""
    tables = {}
    for lams in ((1.0, 2.0), (0.1, 0.2)):
        for n in (10, 50, 150):
            config = BetaProductConfig(
                n_factors=n, lambda1=lams[0], lambda2=lams[1],
                r_schedule=(250_000,), n_batches=25, seed=ACCEPTANCE_SEED)
            t0 = time.perf_counter()
            row = beta_product_rows(config)[0]
            row["runtime"] = time.perf_counter() - t0
            tables[(lams, n)] = row
    return tables


def test_beta_truth_values(beta_tables):
    want = {10: -10.99, 50: -54.93, 150: -164.79}
    for n, truth_2dp in want.items():
        row = beta_tables[((1.0, 2.0), n)]
        ok_truth = round(row["log_truth"], 2) == truth_2dp
        gap = abs(row["log_marginal"] - row["log_truth"])
        ok_marginal = gap <= 3 * row["mce_marginal"]
        ok_time = row["runtime"] < 30.0
        report(
            f"beta-truth N={n}",
            ok_truth and ok_marginal and ok_time,
            f"truth {row['log_truth']:.2f} (want {truth_2dp}), "
            f"|marginal-truth| {gap:.4f} vs 3*MCE {3 * row['mce_marginal']:.4f}, "
            f"runtime {row['runtime']:.1f}s < 30s",
        )


def test_beta_mce_ordering(beta_tables):
    for lams in ((1.0, 2.0), (0.1, 0.2)):
        for n in (10, 50, 150):
            row = beta_tables[(lams, n)]
            report(
                f"beta-mce-order lam={lams} N={n}",
                row["mce_joint"] > row["mce_marginal"],
                f"MCE_J {row['mce_joint']:.4f} > MCE_M {row['mce_marginal']:.4f}",
            )
    ratios = [beta_tables[((0.1, 0.2), n)]["mce_joint"]
              / beta_tables[((0.1, 0.2), n)]["mce_marginal"]
              for n in (10, 50, 150)]
    report(
        "beta-mce-ratio-monotone",
        ratios[0] < ratios[1] < ratios[2],
        "MCE_J/MCE_M for Beta(0.1,0.2) at N=10/50/150: "
        + " < ".join(f"{r:.1f}" for r in ratios),
    )


# ----------------------------------------------------------------------
# variance theory
# ----------------------------------------------------------------------

def test_variance_formula_fidelity():
    rng = make_streams(ACCEPTANCE_SEED).stream(10)
    reps = 100_000
    worst = 0.0
    for n in (2, 3, 5):
        m = summary_from_moments([0.5] * n, [0.25] * n, zero_tol=0.0)
        for r in (10, 50):
            draws = (rng.random((reps, r, n)) < 0.5).astype(np.float64)
            emp_joint = draws.prod(axis=2).mean(axis=1).var(ddof=1)
            emp_marg = draws.mean(axis=1).prod(axis=1).var(ddof=1)
            vb = estimator_variances(m, r)
            worst = max(worst,
                        abs(emp_joint / vb.var_joint - 1.0),
                        abs(emp_marg / vb.var_marginal - 1.0))
    vb = estimator_variances(
        summary_from_moments([0.5, 0.5], [0.25, 0.25], zero_tol=0.0), 100)
    exact_ok = (abs(vb.var_joint - 1.875e-3) <= 1e-12 * 1.875e-3
                and abs(vb.var_marginal - 1.25625e-3) <= 1e-12 * 1.25625e-3)
    report(
        "variance-formula-fidelity",
        worst <= 0.10 and exact_ok,
        f"worst empirical/formula deviation {worst:.3%} (tol 10%); "
        f"N=2,R=100 closed forms {vb.var_joint:.6e}/{vb.var_marginal:.6e} "
        f"match 1.875e-3/1.25625e-3 to 1e-12",
    )


def test_algebraic_equivalences():
    rng = make_streams(ACCEPTANCE_SEED).stream(11)
    worst_cv = worst_diff = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        mean = rng.uniform(-2, 2, size=n)
        mean[rng.random(n) < 0.25] = 0.0
        m = summary_from_moments(mean, rng.uniform(0, 3, size=n), zero_tol=0.0)
        r = int(rng.integers(2, 1000))
        vb = estimator_variances(m, r)
        for which, want in (("joint", vb.var_joint), ("marginal", vb.var_marginal)):
            got = variance_cv_form(m, r, which)
            worst_cv = max(worst_cv, abs(got - want) / max(abs(want), 1e-300))
        scale = max(vb.var_joint, vb.var_marginal, 1e-300)
        worst_diff = max(worst_diff,
                         abs(variance_difference(m, r) - vb.difference) / scale)
    worst_enum = 0.0
    for n in range(1, 13):
        m = summary_from_moments(rng.uniform(-2, 2, size=n),
                                 rng.uniform(0, 2, size=n), zero_tol=0.0)
        closed = goodman_product_variance(m)
        enum = subset_enumeration_variance(m)
        worst_enum = max(worst_enum, abs(enum - closed) / max(abs(closed), 1e-300))
    report(
        "algebraic-equivalences",
        worst_cv <= 1e-12 and worst_diff <= 1e-12 and worst_enum <= 1e-12,
        f"CV-form dev {worst_cv:.2e}, difference-form dev {worst_diff:.2e} "
        f"(1000 configs), subset-enumeration dev {worst_enum:.2e} (N<=12); "
        f"tol 1e-12",
    )


def test_tci_identities():
    rng = make_streams(ACCEPTANCE_SEED).stream(12)
    worst_decomp = worst_varid = 0.0
    bound_violated = 0
    for _ in range(1000):
        r = int(rng.integers(3, 40))
        n = int(rng.integers(2, 9))
        kind = rng.integers(0, 3)
        if kind == 0:
            values = rng.standard_normal((r, n)) + rng.uniform(-1, 1, size=n)
        elif kind == 1:
            values = rng.uniform(-1.0, 2.0, size=(r, n))
        else:
            values = rng.integers(-2, 3, size=(r, n)).astype(float)
        block = as_block(values)
        direct = tci_sample(block)
        decomposed, cov_terms = tci_decomposition(block)
        scale = decomposition_error_scale(values, direct, decomposed, cov_terms)
        worst_decomp = max(worst_decomp, abs(direct - decomposed) / scale)
        true_var, indep_var, tci = variance_underestimation(block)
        vscale = max(true_var, indep_var, 1e-30)
        worst_varid = max(worst_varid,
                          abs(true_var - (indep_var - tci**2)) / vscale)
        m = moments(block, zero_tol=0.0)
        bound = tci_bound(m, partial_product_variances(block))
        if abs(direct) > bound * (1 + 1e-10) + 1e-12 * scale:
            bound_violated += 1
    report(
        "tci-identities",
        worst_decomp <= 1e-10 and worst_varid <= 1e-10 and bound_violated == 0,
        f"decomposition dev {worst_decomp:.2e}, variance identity dev "
        f"{worst_varid:.2e} (tol 1e-10), bound violations {bound_violated}/1000",
    )


def test_iteration_equivalence():
    m = summary_from_moments([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], zero_tol=0.0)
    r_marginal = 10
    r_joint = required_iterations(r_marginal, m)
    rng = make_streams(ACCEPTANCE_SEED).stream(13)
    reps = 100_000
    draws = rng.integers(0, 2, size=(reps, r_marginal, 3)).astype(np.int8) * 2 - 1
    var_m = draws.mean(axis=1, dtype=np.float64).prod(axis=1).var(ddof=1)
    r_j = int(round(r_joint))
    total = 0.0
    total_sq = 0.0
    chunk = 10_000
    for start in range(0, reps, chunk):
        d = rng.integers(0, 2, size=(chunk, r_j, 3)).astype(np.int8) * 2 - 1
        est = d.prod(axis=2).mean(axis=1, dtype=np.float64)
        total += est.sum()
        total_sq += (est**2).sum()
    var_j = (total_sq - total**2 / reps) / (reps - 1)
    report(
        "iteration-equivalence",
        r_j == 1000 and abs(var_j / var_m - 1.0) <= 0.15,
        f"R_J {r_joint:.1f} (want 1000); empirical var joint@{r_j} "
        f"{var_j:.3e} vs marginal@{r_marginal} {var_m:.3e}, "
        f"ratio {var_j / var_m:.3f} (tol 15%)",
    )


# ----------------------------------------------------------------------
# conditional independence
# ----------------------------------------------------------------------

def test_conditional_independence():
    # shared v ~ N(0,1); u_i | v ~ N(v, 1); phi_i = u_i, two factors.
    # E(phi|v) = v, V(phi|v) = 1: Var(joint@R) = (2+3)/R,
    # Var(nested@(R1,R2)) = (2 + 2/R2 + 1/R2^2)/R1.
    rng = make_streams(ACCEPTANCE_SEED).stream(14)
    reps, r = 100_000, 100
    v = rng.standard_normal((reps, r))
    joint = ((v + rng.standard_normal((reps, r)))
             * (v + rng.standard_normal((reps, r)))).mean(axis=1)
    emp_joint = joint.var(ddof=1)
    formula_joint = 5.0 / r
    ok_formula = abs(emp_joint / formula_joint - 1.0) <= 0.10

    r2 = 10
    v = rng.standard_normal((reps, r))
    u1 = v[:, :, None] + rng.standard_normal((reps, r, r2))
    u2 = v[:, :, None] + rng.standard_normal((reps, r, r2))
    nested = (u1.mean(axis=2) * u2.mean(axis=2)).mean(axis=1)
    emp_nested = nested.var(ddof=1)
    formula_nested = (2.0 + 2.0 / r2 + 1.0 / r2**2) / r
    ok_nested = abs(emp_nested / formula_nested - 1.0) <= 0.10

    def var_se(sample):
        var = sample.var(ddof=1)
        mu4 = ((sample - sample.mean()) ** 4).mean()
        return math.sqrt(max(mu4 - var**2, 0.0) / sample.size)

    separation = (emp_joint - emp_nested) / math.hypot(var_se(joint),
                                                       var_se(nested))
    ok_order = emp_nested < emp_joint and separation > 4.0

    # analytic-inner-moment path: O(1/r) vs the joint estimator's O(1/r^2)
    slopes_r = np.array([10, 30, 100])
    nrep = 4000
    var_joint_r, var_marg_r = [], []
    for rr in slopes_r:
        big_r = rr * rr
        est = np.empty(nrep)
        chunk = max(1, 20_000_000 // (big_r * 3))
        for s in range(0, nrep, chunk):
            mch = min(chunk, nrep - s)
            vv = rng.standard_normal((mch, big_r))
            est[s:s + mch] = ((vv + rng.standard_normal((mch, big_r)))
                              * (vv + rng.standard_normal((mch, big_r)))
                              ).mean(axis=1)
        var_joint_r.append(est.var(ddof=1))
        vv = rng.standard_normal((nrep, rr))
        var_marg_r.append((vv * vv).mean(axis=1).var(ddof=1))
    slope_joint = np.polyfit(np.log(slopes_r), np.log(var_joint_r), 1)[0]
    slope_marg = np.polyfit(np.log(slopes_r), np.log(var_marg_r), 1)[0]
    ok_slopes = (abs(slope_joint + 2.0) < 0.35 and abs(slope_marg + 1.0) < 0.35
                 and slope_marg - slope_joint > 0.5)
    report(
        "conditional-independence",
        ok_formula and ok_nested and ok_order and ok_slopes,
        f"formula-vs-empirical: joint {emp_joint / formula_joint:.3f}, "
        f"nested {emp_nested / formula_nested:.3f} (tol 10%); ordering "
        f"separation {separation:.1f} SE (need 4); slopes joint "
        f"{slope_joint:.2f} (~-2) vs analytic-inner {slope_marg:.2f} (~-1)",
    )


# ----------------------------------------------------------------------
# evidence estimators
# ----------------------------------------------------------------------

def test_bml_conjugate_recovery():
    t0 = time.perf_counter()
    rng = make_streams(ACCEPTANCE_SEED).stream(15)
    model = ConjugateModel(obs=rng.normal(0.4, 1.2, size=12), obs_sd=1.0,
                           group_sd=0.8, prior_mean=0.0, prior_sd=1.5)
    truth = model.log_evidence()
    runs = conjugate_estimates(model, n_draws=100_000,
                               rng=make_streams(ACCEPTANCE_SEED).stream(16),
                               n_batches=50)
    elapsed = time.perf_counter() - t0
    details, ok = [], elapsed < 60.0
    for (method, mode), run in sorted(runs.items()):
        gap = abs(run.log_estimate - truth)
        ok = ok and gap <= 3 * run.mce
        details.append(f"{method}_{mode} |err| {gap:.3f} <= {3 * run.mce:.3f}")
    report("bml-conjugate", ok,
           "; ".join(details) + f"; runtime {elapsed:.1f}s < 60s")


@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    results = gllvm_results(GllvmConfig.desk_scale(seed=ACCEPTANCE_SEED))
    results.runtime = time.perf_counter() - t0
    return results


def test_gllvm_qualitative_orderings(desk_run):
    runs = desk_run.runs
    mce = {key: run.mce for key, run in runs.items()}
    bm = {key: run.batch_mean for key, run in runs.items()}
    report("gllvm-mce-bh-vs-bg-joint",
           mce[("bh", "joint")] > mce[("bg", "joint")],
           f"MCE(BH_J) {mce[('bh', 'joint')]:.3f} > "
           f"MCE(BG_J) {mce[('bg', 'joint')]:.3f}")
    report("gllvm-mce-bg-joint-vs-marginal",
           mce[("bg", "joint")] > mce[("bg", "marginal")],
           f"MCE(BG_J) {mce[('bg', 'joint')]:.3f} > "
           f"MCE(BG_M) {mce[('bg', 'marginal')]:.3f}")
    pair_details = []
    pairs_ok = True
    for a, b in (("rm", "bh"), ("rm", "bg"), ("bh", "bg")):
        gap = abs(bm[(a, "marginal")] - bm[(b, "marginal")])
        limit = 3 * (mce[(a, "marginal")] + mce[(b, "marginal")])
        pairs_ok = pairs_ok and gap <= limit
        pair_details.append(f"{a}-{b} {gap:.2f}<={limit:.2f}")
    report("gllvm-marginal-agreement", pairs_ok, "; ".join(pair_details))
    report("gllvm-runtime", desk_run.runtime < 600.0,
           f"desk-scale run {desk_run.runtime:.0f}s < 600s single-core")


def test_gllvm_rm_joint_marginal_separation(desk_run):
    """Known red at the pinned desk scale.

    The joint reciprocal estimator's covariation bias is present (right
    sign, about 1.3x its own batch MCE) but never reaches the demanded
    3x(MCE sum) at p=6, 100 cases, k=1, 5000 draws: over 24 seeds the
    attained ratio is 0.20-0.67.  The same pipeline crosses the threshold
    at the full-protocol dimensionality (600 cases, k=2).  Kept faithful
    to the stated criterion rather than loosened; see the decisions ledger.
    """
    runs = desk_run.runs
    gap = abs(runs[("rm", "joint")].batch_mean
              - runs[("rm", "marginal")].batch_mean)
    limit = 3 * (runs[("rm", "joint")].mce + runs[("rm", "marginal")].mce)
    report("gllvm-rm-separation", gap > limit,
           f"|RM_J - RM_M| batch means {gap:.2f} > 3*(MCE sum) {limit:.2f}")


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------

def test_quadrature_criteria():
    worst = 0.0
    for order in (2, 5, 10, 21, 41, 100):
        rule = gauss_hermite(order)
        moments_wanted = {0: 1.0, 2: 1.0, 4: 3.0, 6: 15.0, 8: 105.0,
                          10: 945.0, 12: 10395.0, 14: 135135.0,
                          16: 2027025.0, 18: 34459425.0}
        for degree, want in moments_wanted.items():
            if degree > 2 * order - 1:
                continue
            got = expect(rule, lambda x, d=degree: x**d)
            worst = max(worst, abs(got - want) / want)
    config = GllvmConfig.desk_scale(seed=ACCEPTANCE_SEED).model_config()
    data, params, _ = simulate_dataset(
        config, make_streams(ACCEPTANCE_SEED).stream(0))
    per_case_gap = np.max(np.abs(
        marginal_case_loglik(params, data, gauss_hermite(21))
        - marginal_case_loglik(params, data, gauss_hermite(41))))
    report(
        "quadrature",
        worst <= 1e-9 and per_case_gap < 1e-6,
        f"even-moment deviation {worst:.2e} (tol 1e-9); order 21-vs-41 "
        f"per-case gap {per_case_gap:.2e} (tol 1e-6)",
    )


# ----------------------------------------------------------------------
# determinism
# ----------------------------------------------------------------------

def test_csv_determinism(tmp_path):
    beta_args = dict(n_factors=8, r_schedule=(2000, 4000), n_batches=5,
                     seed=ACCEPTANCE_SEED, replicates=2)
    paths = []
    for tag, threads in (("t1", 1), ("t8", 8), ("t1b", 1)):
        rows = beta_product_rows(BetaProductConfig(**beta_args, threads=threads))
        path = tmp_path / f"beta_{tag}.csv"
        write_csv(path, rows, BETA_PRODUCT_COLUMNS)
        paths.append(path.read_bytes())
    beta_ok = paths[0] == paths[1] == paths[2]

    gllvm_config = GllvmConfig(n_items=3, n_cases=15, n_factors=1, n_kept=80,
                               burn_in=80, thin=1, quad_order=7, n_batches=4,
                               seed=ACCEPTANCE_SEED)
    blobs = []
    for tag in ("a", "b"):
        results = gllvm_results(gllvm_config)
        path = tmp_path / f"gllvm_{tag}.csv"
        write_csv(path, results.table_rows, GLLVM_TABLE_COLUMNS)
        blobs.append(path.read_bytes())
    gllvm_ok = blobs[0] == blobs[1]
    report("csv-determinism", beta_ok and gllvm_ok,
           f"beta-product byte-identical over threads 1/8 and reruns: {beta_ok}; "
           f"gllvm byte-identical over reruns: {gllvm_ok}")
