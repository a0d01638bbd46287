"""Influence engine: hand values, reference cross-checks, invariants."""

import dataclasses

import numpy as np
import pytest

from cif_fusion import Cohort, PositivityError
from cif_fusion.estimators import (
    Z95,
    Target,
    _influence_values,
    estimate,
    estimate_all,
    influence_gamma,
    influence_theta,
    variance_reduction,
)
from cif_fusion.cohort import nelson_aalen
from cif_fusion.hazards import aalen_johansen
from cif_fusion.logistic import LogisticFit
from cif_fusion.nuisance import fit_nuisances
from helpers import manual_ns, null_fit, step_fit, synth_cohort
from reference import RefEvaluator


def simple_cohort(times, causes, tau=None, p=1):
    n = len(times)
    return Cohort.from_arrays(
        ids=np.arange(n),
        times=np.asarray(times, dtype=float),
        causes=np.asarray(causes),
        treat=np.zeros(n),
        pop=np.ones(n, dtype=np.int64),
        X=np.zeros((n, p)),
        tau=tau if tau is not None else float(max(times)) + 1.0,
    )


def na_ns(cohort, cap=1e6):
    """Empirical-increment nuisances: the harness of the small-sample checks."""
    p = cohort.covariate_dim
    h1 = nelson_aalen(cohort, 1)
    h2 = nelson_aalen(cohort, 2)
    hc = nelson_aalen(cohort, 0)
    return manual_ns(
        pool=step_fit(h1.jump_times, h1.jump_sizes, 1, p=p),
        c2=step_fit(h2.jump_times, h2.jump_sizes, 2, p=p),
        cens=step_fit(hc.jump_times, hc.jump_sizes, 0, p=p),
        pi=1.0,
        e1=0.0,
        alpha=1.0,
        cap=cap,
        p=p,
    )


def random_small_cohort(rng, n):
    causes = rng.integers(0, 3, n)
    offsets = np.array([0.75, 0.25, 0.5])
    times = rng.integers(1, 6, n).astype(float) + offsets[causes]
    return simple_cohort(times, causes, tau=10.0)


@pytest.fixture(scope="module")
def fitted300():
    cohort = synth_cohort(n=300, seed=3)
    return cohort, fit_nuisances(cohort)


@pytest.fixture(scope="module")
def fitted400():
    cohort = synth_cohort(n=400, seed=9)
    return cohort, fit_nuisances(cohort)


class TestHandValues:
    def test_three_record_theta_values(self):
        cohort = simple_cohort([1.0, 2.0, 3.0], [1, 2, 0])
        ns = na_ns(cohort)
        iv = influence_theta(cohort, ns, arm=0, cause=1, t=2.5, mode="rct-only")
        np.testing.assert_allclose(iv.values, [1.0, 0.0, 0.0], atol=1e-14)
        assert iv.values.mean() == pytest.approx(1.0 / 3.0, abs=1e-14)
        assert iv.target == Target("theta", 1, 0)
        assert iv.time == 2.5 and iv.mode == "rct-only"

    def test_three_record_mean_equals_aalen_johansen(self):
        cohort = simple_cohort([1.0, 2.0, 3.0], [1, 2, 0])
        ns = na_ns(cohort)
        h1 = nelson_aalen(cohort, 1)
        h2 = nelson_aalen(cohort, 2)
        for t in (0.5, 1.0, 2.2, 3.0):
            iv = influence_theta(cohort, ns, 0, 1, t, mode="rct-only")
            assert iv.values.mean() == pytest.approx(aalen_johansen(h1, h2, t), abs=1e-13)

    def test_single_subject_gamma_is_one(self):
        cohort = simple_cohort([1.0], [1], tau=4.0)
        ns = na_ns(cohort)
        iv = influence_gamma(cohort, ns, arm=0, cause=1, t=2.0, mode="rct-only")
        assert iv.values[0] == pytest.approx(1.0, abs=1e-14)

    def test_random_small_cohorts_match_aalen_johansen(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            cohort = random_small_cohort(rng, int(rng.integers(3, 13)))
            ns = na_ns(cohort, cap=1e9)
            h1 = nelson_aalen(cohort, 1)
            h2 = nelson_aalen(cohort, 2)
            for t in (1.6, 3.1, 5.9):
                for cause, hi, hc in ((1, h1, h2), (2, h2, h1)):
                    iv = influence_theta(cohort, ns, 0, cause, t, mode="rct-only")
                    aj = aalen_johansen(hi, hc, t)
                    assert abs(iv.values.mean() - aj) < 1e-12


class TestReferenceCrossCheck:
    def test_theta_matches_reference(self, fitted300):
        cohort, ns = fitted300
        rng = np.random.default_rng(0)
        idx = rng.choice(cohort.n, 25, replace=False)
        cases = [(0, 1, "fusion"), (0, 2, "rct-only"), (1, 1, "fusion")]
        for arm, cause, mode in cases:
            iv = influence_theta(cohort, ns, arm, cause, t=1.2, mode=mode)
            ref = RefEvaluator(cohort, ns, arm, mode if arm == 0 else "rct-only")
            for i in idx:
                assert iv.values[i] == pytest.approx(
                    ref.value(int(i), "theta", cause, 1.2), abs=1e-9
                )

    def test_gamma_matches_reference(self, fitted300):
        cohort, ns = fitted300
        rng = np.random.default_rng(1)
        idx = rng.choice(cohort.n, 8, replace=False)
        for arm, cause, mode in [(0, 1, "fusion"), (0, 2, "rct-only"), (1, 2, "fusion")]:
            iv = influence_gamma(cohort, ns, arm, cause, t=0.8, mode=mode)
            ref = RefEvaluator(cohort, ns, arm, mode if arm == 0 else "rct-only")
            for i in idx:
                assert iv.values[i] == pytest.approx(
                    ref.gamma(int(i), cause, 0.8), abs=1e-9
                )

    def test_surv_matches_reference(self, fitted300):
        cohort, ns = fitted300
        vals = _influence_values(cohort, ns, [("surv", 0, 0, 1.2, "fusion")])
        v = vals[("surv", 0, 0, 1.2, "fusion")]
        ref = RefEvaluator(cohort, ns, 0, "fusion")
        for i in (0, 7, 41, 260):
            assert v[i] == pytest.approx(ref.value(i, "surv", 0, 1.2), abs=1e-9)


class TestInvariants:
    def test_complement_symmetry(self, fitted400):
        cohort, ns = fitted400
        d_over_alpha = (cohort.pop == 1) / ns.alpha_hat
        for mode in ("fusion", "rct-only"):
            reqs = [
                ("theta", 1, 0, 1.5, mode),
                ("theta", 2, 0, 1.5, mode),
                ("surv", 0, 0, 1.5, mode),
            ]
            vals = _influence_values(cohort, ns, reqs)
            total = sum(vals[r] for r in reqs)
            assert np.max(np.abs(total - d_over_alpha)) < 1e-8

    def test_fusion_equals_rct_only_when_pi_is_one(self):
        cohort = synth_cohort(n=500, seed=21, ext_frac=0.0)
        ns = fit_nuisances(cohort)
        ns2 = dataclasses.replace(
            ns,
            pi=LogisticFit.constant(1.0),
            haz_comp_ext=ns.haz_comp_rct_ctrl,
            cens_ext=ns.cens_rct_ctrl,
        )
        for fn in (influence_theta, influence_gamma):
            fused = fn(cohort, ns2, 0, 1, 1.0, mode="fusion")
            rct = fn(cohort, ns2, 0, 1, 1.0, mode="rct-only")
            assert np.max(np.abs(fused.values - rct.values)) < 1e-12

    def test_t_zero_gives_zero(self, fitted400):
        cohort, ns = fitted400
        for fn in (influence_theta, influence_gamma):
            iv = fn(cohort, ns, 0, 1, 0.0, mode="fusion")
            assert np.all(iv.values == 0.0)
        rep = estimate(cohort, ns, Target("theta", 1, 0), 0.0)
        assert rep.estimate == 0.0 and rep.std_error == 0.0
        assert rep.ci_low == 0.0 and rep.ci_high == 0.0

    def test_t_below_every_fitted_jump_gives_zero(self, fitted400):
        cohort, ns = fitted400
        t = 0.5 * float(cohort.times[cohort.causes > 0].min())
        for mode in ("fusion", "rct-only"):
            iv = influence_theta(cohort, ns, 0, 1, t, mode=mode)
            assert np.all(iv.values == 0.0)

    def test_plug_in_path_monotone_and_matches_derived(self, fitted400):
        cohort, ns = fitted400
        from cif_fusion.nuisance import derived_quantities

        tc = 0.5 * min(f.baseline_times.min() for f in ns.component_fits().values())
        m = 30
        probe = Cohort.from_arrays(
            ids=np.arange(m),
            times=np.full(m, tc),
            causes=np.zeros(m, dtype=np.int64),
            treat=np.zeros(m),
            pop=np.ones(m, dtype=np.int64),
            X=cohort.X[:m],
            tau=cohort.tau,
        )
        times = np.quantile(ns.haz_interest_pooled.baseline_times, [0.1, 0.3, 0.6, 0.9])
        prev = np.zeros(m)
        for t in times:
            iv = influence_theta(probe, ns, 0, 1, float(t), mode="rct-only")
            path = iv.values * ns.alpha_hat
            assert np.all(path >= prev - 1e-15) and np.all(path <= 1.0)
            for i in (0, 11, 29):
                want = derived_quantities(ns, probe.X[i], 0, 1, float(t), float(t))
                assert path[i] == pytest.approx(want["F1j_at_t"], abs=1e-12)
            prev = path

    def test_arm1_ignores_mode(self, fitted400):
        cohort, ns = fitted400
        a = influence_theta(cohort, ns, 1, 1, 1.0, mode="fusion")
        b = influence_theta(cohort, ns, 1, 1, 1.0, mode="rct-only")
        assert np.array_equal(a.values, b.values)

    def test_effect_is_arm_difference(self, fitted400):
        cohort, ns = fitted400
        eff = influence_theta(cohort, ns, "effect", 1, 1.0, mode="fusion")
        a1 = influence_theta(cohort, ns, 1, 1, 1.0, mode="fusion")
        a0 = influence_theta(cohort, ns, 0, 1, 1.0, mode="fusion")
        np.testing.assert_allclose(eff.values, a1.values - a0.values, atol=1e-15)
        rep = estimate(cohort, ns, Target("theta", 1, "effect"), 1.0)
        assert rep.estimate == pytest.approx(
            a1.values.mean() - a0.values.mean(), abs=1e-12
        )


class TestReports:
    def test_report_math(self, fitted400):
        cohort, ns = fitted400
        iv = influence_theta(cohort, ns, 0, 1, 1.0, mode="fusion")
        rep = estimate(cohort, ns, Target("theta", 1, 0), 1.0, mode="fusion")
        est = iv.values.mean()
        centered = iv.values - (cohort.pop == 1) / ns.alpha_hat * est
        se = np.sqrt(np.mean(centered**2) / cohort.n)
        assert rep.estimate == pytest.approx(est, abs=0.0)
        assert rep.std_error == pytest.approx(se, abs=1e-15)
        assert rep.ci_low == pytest.approx(est - Z95 * se, abs=1e-15)
        assert rep.ci_high == pytest.approx(est + Z95 * se, abs=1e-15)
        assert rep.n_used == cohort.n

    def test_estimate_all_matches_single_calls(self, fitted400):
        cohort, ns = fitted400
        # batch passes integrate over a finer union grid than single calls,
        # so agreement is to rounding, not bitwise
        targets = [Target("theta", 1, 0), Target("gamma", 2, 0), Target("theta", 1, 1)]
        times = (0.6, 1.4)
        modes = ("fusion", "rct-only")
        reports = estimate_all(cohort, ns, targets, times, modes)
        assert len(reports) == len(targets) * len(times) * len(modes)
        k = 0
        for tg in targets:
            for t in times:
                for mode in modes:
                    single = estimate(cohort, ns, tg, t, mode)
                    assert reports[k].target == single.target
                    assert reports[k].estimate == pytest.approx(single.estimate, abs=1e-13)
                    assert reports[k].std_error == pytest.approx(single.std_error, abs=1e-13)
                    assert reports[k].ci_low == pytest.approx(single.ci_low, abs=1e-13)
                    k += 1

    def test_arm1_rows_equal_across_modes(self, fitted400):
        cohort, ns = fitted400
        a = estimate(cohort, ns, Target("theta", 1, 1), 1.0, "fusion")
        b = estimate(cohort, ns, Target("theta", 1, 1), 1.0, "rct-only")
        assert a.estimate == b.estimate and a.std_error == b.std_error


class TestVarianceReduction:
    def test_zero_when_pi_is_one(self):
        cohort = synth_cohort(n=300, seed=15)
        ns = dataclasses.replace(fit_nuisances(cohort), pi=LogisticFit.constant(1.0))
        rep = variance_reduction(cohort, ns, 1.0)
        assert rep.reduction == 0.0
        assert rep.relative == 0.0

    def test_zero_when_pooled_hazard_is_null(self):
        cohort = synth_cohort(n=200, seed=16)
        ns = manual_ns(ext2=null_fit(2, p=3), p=3, alpha=cohort.alpha_hat, pi=0.55)
        rep = variance_reduction(cohort, ns, 1.0)
        assert rep.reduction == 0.0

    def test_positive_on_fitted_cohort(self):
        cohort = synth_cohort(n=600, seed=17)
        ns = fit_nuisances(cohort)
        rep = variance_reduction(cohort, ns, 1.0)
        assert rep.reduction > 0.0
        assert rep.rct_only_variance > 0.0
        assert 0.0 < rep.relative < 1.0
        assert rep.time == 1.0


class TestValidation:
    def test_target_validation(self):
        with pytest.raises(ValueError, match="family"):
            Target("cif", 1, 0)
        with pytest.raises(ValueError, match="cause"):
            Target("theta", 3, 0)
        with pytest.raises(ValueError, match="cause 0"):
            Target("surv", 1, 0)
        with pytest.raises(ValueError, match="arm"):
            Target("theta", 1, 2)

    def test_mode_and_time_validation(self):
        cohort = simple_cohort([1.0, 2.0], [1, 2])
        ns = na_ns(cohort)
        with pytest.raises(ValueError, match="mode"):
            influence_theta(cohort, ns, 0, 1, 1.0, mode="pooled")
        with pytest.raises(ValueError, match="within"):
            influence_theta(cohort, ns, 0, 1, cohort.tau + 1.0, mode="rct-only")
        with pytest.raises(ValueError, match="within"):
            influence_theta(cohort, ns, 0, 1, -0.5, mode="rct-only")

    def test_fusion_needs_external_fits(self):
        cohort = simple_cohort([1.0, 2.0], [1, 2])
        ns = na_ns(cohort)
        with pytest.raises(ValueError, match="external"):
            influence_theta(cohort, ns, 0, 1, 1.0, mode="fusion")

    def test_arm1_needs_treated_fits(self):
        cohort = simple_cohort([1.0, 2.0], [1, 2])
        ns = na_ns(cohort)
        with pytest.raises(ValueError, match="treated"):
            influence_theta(cohort, ns, 1, 1, 1.0, mode="rct-only")

    def test_positivity_violation_at_event(self):
        cohort = simple_cohort([0.5, 2.0], [1, 0])
        ns = manual_ns(pool=step_fit([0.5], [0.4], 1), e1=1.0, alpha=1.0)
        with pytest.raises(PositivityError, match="positivity violation"):
            influence_theta(cohort, ns, 0, 1, 1.0, mode="rct-only")
