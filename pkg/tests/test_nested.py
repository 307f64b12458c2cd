import math

import numpy as np
import pytest

from prodmc.core import make_streams
from prodmc.nested import (HierarchicalModel, cond_cv_diagnostics,
                           cond_variance_formulas, nested_joint,
                           nested_marginal)


def gaussian_model(n_factors=2, shift=0.0, count=None):
    """Shared v ~ N(0,1); u_i | v ~ N(v, 1); phi_i(u, v) = u + shift.

    Conditional moments: E(phi_i|v) = v + shift, V(phi_i|v) = 1.
    ``count`` is an optional one-element list accumulating phi evaluations.
    """
    def evaluate(i, u, v):
        if count is not None:
            count[0] += np.asarray(u).size
        return u + shift

    return HierarchicalModel(
        n_factors=n_factors,
        draw_shared=lambda rng, size: rng.standard_normal(size),
        draw_conditional=lambda rng, i, v: v + rng.standard_normal(np.shape(v)[0]),
        evaluate=evaluate,
        conditional_mean=lambda i, v: v + shift,
        conditional_var=lambda i, v: np.ones(np.shape(v)[0]),
    )


def constant_model(n_factors=3, value=1.0):
    return HierarchicalModel(
        n_factors=n_factors,
        draw_shared=lambda rng, size: rng.standard_normal(size),
        draw_conditional=lambda rng, i, v: rng.standard_normal(np.shape(v)[0]),
        evaluate=lambda i, u, v: np.full(np.shape(u)[0], value),
        conditional_mean=lambda i, v: np.full(np.shape(v)[0], value),
        conditional_var=lambda i, v: np.zeros(np.shape(v)[0]),
    )


class TestNestedJoint:
    def test_constant_integrand(self):
        report = nested_joint(constant_model(), 50, make_streams(1).stream(0))
        assert report.estimate == pytest.approx(1.0, rel=1e-14)
        assert report.mce == 0.0

    def test_gaussian_mean_zero(self):
        model = gaussian_model(n_factors=1)
        report = nested_joint(model, 100_000, make_streams(2).stream(0))
        # E[phi] = E[u] = 0; the linear-scale standard error comes with the report
        assert abs(report.estimate) < 4 * report.mce

    def test_deterministic_inner_collapses(self):
        # u = v exactly: the nested rows are just phi_i(v), a plain product block
        model = HierarchicalModel(
            n_factors=2,
            draw_shared=lambda rng, size: rng.uniform(0.5, 1.5, size),
            draw_conditional=lambda rng, i, v: v,
            evaluate=lambda i, u, v: u + i,
        )
        rng = make_streams(3).stream(0)
        report = nested_joint(model, 500, rng)
        v = make_streams(3).stream(0).uniform(0.5, 1.5, 500)
        expected = (v * (v + 1)).mean()
        assert report.estimate == pytest.approx(expected, rel=1e-12)

    def test_r_validated(self):
        with pytest.raises(ValueError):
            nested_joint(constant_model(), 0, make_streams(1).stream(0))


class TestNestedMarginal:
    def test_single_inner_draw_equals_joint(self):
        # with r_inner=1 the two estimators consume the same draws in the
        # same order, hence identical estimates
        model = gaussian_model()
        a = nested_joint(model, 400, make_streams(5).stream(0))
        b = nested_marginal(model, 400, 1, make_streams(5).stream(0))
        assert a.log_estimate == b.log_estimate
        assert a.sign == b.sign

    def test_budget_accounting(self):
        count = [0]
        model = gaussian_model(n_factors=3, count=count)
        nested_marginal(model, 40, 7, make_streams(6).stream(0))
        assert count[0] == 40 * 7 * 3

    def test_analytic_path_requires_moments(self):
        model = HierarchicalModel(
            n_factors=1,
            draw_shared=lambda rng, size: rng.standard_normal(size),
            draw_conditional=lambda rng, i, v: v,
            evaluate=lambda i, u, v: u,
        )
        with pytest.raises(ValueError, match="analytic"):
            nested_marginal(model, 10, 0, make_streams(1).stream(0))

    def test_analytic_path_variance_is_shared_term_only(self):
        # with exact inner means only Var_v[prod E(phi_i|v)] / R1 remains
        model = gaussian_model(n_factors=2, shift=0.0)
        reps = 4000
        estimates = np.array([
            nested_marginal(model, 50, 0, make_streams(7).stream(i)).estimate
            for i in range(reps)
        ])
        # prod of conditional means is v^2: Var(v^2) = 2, so Var = 2/50
        want = 2.0 / 50
        assert estimates.var(ddof=1) == pytest.approx(want, rel=0.10)

    def test_phi_independent_of_v_collapses_to_plain_marginal(self):
        # factors that ignore v: one outer draw, the inner averages are the
        # plain per-factor column means
        model = HierarchicalModel(
            n_factors=2,
            draw_shared=lambda rng, size: np.zeros(size),
            draw_conditional=lambda rng, i, v: rng.uniform(0, 1, np.shape(v)[0]),
            evaluate=lambda i, u, v: u,
        )
        report = nested_marginal(model, 1, 200, make_streams(8).stream(0))
        # replay the stream: the shared draw consumes nothing, so the two
        # factors use consecutive uniform blocks
        rng = make_streams(8).stream(0)
        u1 = rng.uniform(0, 1, 200)
        u2 = rng.uniform(0, 1, 200)
        assert report.estimate == pytest.approx(u1.mean() * u2.mean(), rel=1e-12)


class TestVarianceFormulas:
    def test_zero_conditional_variance(self):
        # phi depends on v only: both variances reduce to the shared term
        model = HierarchicalModel(
            n_factors=2,
            draw_shared=lambda rng, size: rng.standard_normal(size),
            draw_conditional=lambda rng, i, v: v,
            evaluate=lambda i, u, v: v + 1.0,
            conditional_mean=lambda i, v: v + 1.0,
            conditional_var=lambda i, v: np.zeros(np.shape(v)[0]),
        )
        rep = cond_variance_formulas(model, r_joint=100, r_outer=100, r_inner=5,
                                     v_sample_size=50_000,
                                     rng=make_streams(9).stream(0))
        assert rep.inner_term_joint == 0.0
        assert rep.inner_term_marginal == 0.0
        assert rep.var_joint == rep.var_marginal

    def test_gaussian_closed_form(self):
        # E(phi|v) = v, V = 1, N = 2: shared term Var(v^2) = 2;
        # E_v[(1+v^2)^2 - v^4] = E[1 + 2 v^2] = 3;
        # marginal inner: E[(1/r2 + v^2)^2 - v^4] = 1/r2^2 + 2/r2
        model = gaussian_model(n_factors=2)
        rep = cond_variance_formulas(model, r_joint=100, r_outer=100, r_inner=10,
                                     v_sample_size=400_000,
                                     rng=make_streams(10).stream(0))
        assert rep.var_joint == pytest.approx(5.0 / 100, rel=0.05)
        assert rep.var_marginal == pytest.approx(2.21 / 100, rel=0.05)
        assert rep.var_marginal < rep.var_joint

    def test_estimated_inner_moments_agree_with_analytic(self):
        model = gaussian_model(n_factors=2)
        blind = HierarchicalModel(
            n_factors=2,
            draw_shared=model.draw_shared,
            draw_conditional=model.draw_conditional,
            evaluate=model.evaluate,
        )
        rng = make_streams(11).stream(0)
        rep = cond_variance_formulas(blind, r_joint=50, r_outer=50, r_inner=4,
                                     v_sample_size=20_000, rng=rng,
                                     inner_moment_draws=400)
        analytic = cond_variance_formulas(model, r_joint=50, r_outer=50,
                                          r_inner=4, v_sample_size=20_000,
                                          rng=make_streams(11).stream(1))
        assert rep.var_joint == pytest.approx(analytic.var_joint, rel=0.1)
        assert rep.var_marginal == pytest.approx(analytic.var_marginal, rel=0.1)

    def test_subset_enumeration_route_matches(self):
        model = gaussian_model(n_factors=3)
        kw = dict(r_joint=80, r_outer=40, r_inner=6, v_sample_size=5_000)
        a = cond_variance_formulas(model, rng=make_streams(12).stream(0), **kw)
        b = cond_variance_formulas(model, rng=make_streams(12).stream(0),
                                   enumerate_subsets=True, **kw)
        assert a.var_joint == pytest.approx(b.var_joint, rel=1e-10)
        assert a.var_marginal == pytest.approx(b.var_marginal, rel=1e-10)

    def test_enumeration_capped(self):
        model = gaussian_model(n_factors=13)
        with pytest.raises(ValueError, match="12"):
            cond_variance_formulas(model, r_joint=10, r_outer=10, r_inner=2,
                                   v_sample_size=100,
                                   rng=make_streams(13).stream(0),
                                   enumerate_subsets=True)


class TestCvDiagnostics:
    def test_conditionally_constant_gives_zero(self):
        model = constant_model(n_factors=2, value=3.0)
        v = make_streams(14).stream(0).standard_normal(100)
        out = cond_cv_diagnostics(model, v)
        assert all(s.cv_min == 0.0 and s.cv_max == 0.0 for s in out)

    def test_scale_invariance(self):
        base = gaussian_model(n_factors=1, shift=5.0)
        scaled = HierarchicalModel(
            n_factors=1,
            draw_shared=base.draw_shared,
            draw_conditional=base.draw_conditional,
            evaluate=lambda i, u, v: 7.0 * (u + 5.0),
            conditional_mean=lambda i, v: 7.0 * (v + 5.0),
            conditional_var=lambda i, v: 49.0 * np.ones(np.shape(v)[0]),
        )
        v = make_streams(15).stream(0).standard_normal(200)
        a = cond_cv_diagnostics(base, v)[0]
        b = cond_cv_diagnostics(scaled, v)[0]
        assert a.cv_median == pytest.approx(b.cv_median, rel=1e-12)

    def test_zero_mean_pairs_flagged(self):
        model = gaussian_model(n_factors=1, shift=0.0)
        v = np.array([0.0, 1.0, 2.0])
        out = cond_cv_diagnostics(model, v)[0]
        assert out.n_flagged == 1

    def test_requires_moments(self):
        model = HierarchicalModel(
            n_factors=1,
            draw_shared=lambda rng, size: rng.standard_normal(size),
            draw_conditional=lambda rng, i, v: v,
            evaluate=lambda i, u, v: u,
        )
        with pytest.raises(ValueError):
            cond_cv_diagnostics(model, np.zeros(3))


class TestVarianceOrdering:
    def test_marginal_beats_joint_at_same_outer_size(self):
        # empirical replicate variances, R1 = R = 400, R2 = 10
        model = gaussian_model(n_factors=2, shift=1.0)
        reps = 3000
        joint = np.array([
            nested_joint(model, 400, make_streams(16).stream(i)).estimate
            for i in range(reps)
        ])
        marginal = np.array([
            nested_marginal(model, 400, 10, make_streams(17).stream(i)).estimate
            for i in range(reps)
        ])
        vj, vm = joint.var(ddof=1), marginal.var(ddof=1)
        # 4-standard-error separation of the difference; SE of a sample
        # variance from the empirical fourth moment: (mu4 - var^2) / n
        def var_se(sample, v):
            mu4 = ((sample - sample.mean()) ** 4).mean()
            return math.sqrt(max(mu4 - v**2, 0.0) / len(sample))

        separation = math.hypot(var_se(joint, vj), var_se(marginal, vm))
        assert vj - vm > 4 * separation
