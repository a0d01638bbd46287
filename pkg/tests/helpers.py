"""Shared builders for test cohorts and hand-made nuisance sets."""

import numpy as np

from cif_fusion import Cohort
from cif_fusion.cox import CoxFit
from cif_fusion.logistic import LogisticFit
from cif_fusion.nuisance import NuisanceSet


def synth_cohort(n=800, seed=5, ext_frac=0.45, constant_col=False):
    """Competing-risks draws with constant-rate cause hazards and covariates."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    if constant_col:
        X[:, 2] = 1.0
    pop = (rng.random(n) >= ext_frac).astype(np.int64)
    treat = np.where(pop == 1, (rng.random(n) < 0.5).astype(np.float64), np.nan)
    trt = (pop == 1) & (treat == 1.0)
    r1 = 0.3 * np.exp(0.4 * X[:, 0] - 0.2 * X[:, 1] + 0.3 * trt)
    r2 = 0.5 * np.exp(0.2 * X[:, 1] + 0.1 * X[:, 0])
    rc = 0.25 * np.ones(n)
    draws = np.stack(
        [rng.exponential(1.0 / rc), rng.exponential(1.0 / r1), rng.exponential(1.0 / r2)]
    )
    causes = draws.argmin(axis=0)
    times = draws.min(axis=0)
    return Cohort.from_arrays(
        ids=np.arange(n),
        times=times,
        causes=causes,
        treat=treat,
        pop=pop,
        X=X,
        tau=float(times.max()) + 1.0,
    )


def null_fit(cause, p=1):
    return CoxFit(
        coefficients=np.zeros(0),
        kept=np.zeros(p, dtype=bool),
        baseline_times=np.zeros(0),
        baseline_sizes=np.zeros(0),
        event_cause=cause,
        n_events=0,
        converged=True,
        n_iter=0,
        loglik=0.0,
        loglik_path=(0.0,),
        clamp=False,
    )


def step_fit(times, sizes, cause, p=1, clamp=False):
    """Covariate-free hazard with the given jumps wrapped as a fitted model."""
    return CoxFit(
        coefficients=np.zeros(0),
        kept=np.zeros(p, dtype=bool),
        baseline_times=np.asarray(times, dtype=np.float64),
        baseline_sizes=np.asarray(sizes, dtype=np.float64),
        event_cause=cause,
        n_events=len(times),
        converged=True,
        n_iter=0,
        loglik=0.0,
        loglik_path=(0.0,),
        clamp=clamp,
    )


def manual_ns(
    pool=None,
    c2=None,
    cens=None,
    ext2=None,
    extc=None,
    trt1=None,
    trt2=None,
    trtc=None,
    pi=0.3,
    e1=0.5,
    alpha=0.5,
    cap=100.0,
    p=1,
):
    has_trt = trt1 is not None
    has_ext = ext2 is not None
    return NuisanceSet(
        pi=pi if isinstance(pi, LogisticFit) else LogisticFit.constant(pi),
        e1=e1 if isinstance(e1, LogisticFit) else LogisticFit.constant(e1),
        haz_interest_pooled=pool if pool is not None else null_fit(1, p),
        haz_comp_rct_ctrl=c2 if c2 is not None else null_fit(2, p),
        haz_comp_ext=ext2,
        haz_interest_trt=trt1,
        haz_comp_trt=trt2,
        cens_rct_ctrl=cens if cens is not None else null_fit(0, p),
        cens_rct_trt=(trtc if trtc is not None else null_fit(0, p)) if has_trt else None,
        cens_ext=(extc if extc is not None else null_fit(0, p)) if has_ext else None,
        alpha_hat=alpha,
        weight_cap=cap,
    )
