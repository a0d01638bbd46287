"""The working-model recipe: eight hazard fits, two logistic fits, weights.

Strata (control = trial control arm, external = pop 0, treated = trial arm 1):
  haz_interest_pooled   cause 1 on trial controls plus externals (transportable)
  haz_comp_rct_ctrl     cause 2 on trial controls
  haz_comp_ext          cause 2 on externals
  haz_interest_trt      cause 1 on treated
  haz_comp_trt          cause 2 on treated
  cens_rct_ctrl         censoring (cause 0 as the event) on trial controls
  cens_rct_trt          censoring on treated
  cens_ext              censoring on externals
plus selection (pop ~ x, all records) and treatment (treat ~ x, trial records)
logistic fits. External or treated strata may be absent; the corresponding
fits are then None and the estimator layer restricts the supported modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .cox import CoxFit, fit_cox, predict_cum_hazard
from .errors import NoEventsError, PositivityError
from .hazards import CumulativeHazard, product_integral_left
from .logistic import LogisticFit, fit_logistic

__all__ = ["NuisanceSet", "fit_nuisances", "derived_quantities", "weight_cap_value"]

WEIGHT_CAP_RULES = ("sqrt_n_log_n_over_5",)


def weight_cap_value(n: int, rule: str = "sqrt_n_log_n_over_5") -> float:
    """Cap for inverse-probability-of-risk weights: sqrt(n) * ln(n) / 5."""
    if rule not in WEIGHT_CAP_RULES:
        raise ValueError(f"unknown weight cap rule {rule!r}")
    return math.sqrt(n) * math.log(n) / 5.0


@dataclass(frozen=True)
class NuisanceSet:
    """Immutable bundle of fitted nuisance models plus the trial fraction."""

    pi: LogisticFit
    e1: LogisticFit
    haz_interest_pooled: CoxFit
    haz_comp_rct_ctrl: CoxFit
    haz_comp_ext: CoxFit | None
    haz_interest_trt: CoxFit | None
    haz_comp_trt: CoxFit | None
    cens_rct_ctrl: CoxFit
    cens_rct_trt: CoxFit | None
    cens_ext: CoxFit | None
    alpha_hat: float
    weight_cap: float

    @property
    def has_external(self) -> bool:
        return self.haz_comp_ext is not None

    @property
    def has_treated(self) -> bool:
        return self.haz_interest_trt is not None

    def component_fits(self) -> dict[str, CoxFit]:
        out = {
            "haz_interest_pooled": self.haz_interest_pooled,
            "haz_comp_rct_ctrl": self.haz_comp_rct_ctrl,
            "cens_rct_ctrl": self.cens_rct_ctrl,
        }
        for name in ("haz_comp_ext", "haz_interest_trt", "haz_comp_trt", "cens_rct_trt", "cens_ext"):
            fit = getattr(self, name)
            if fit is not None:
                out[name] = fit
        return out


def _empty_censoring_fit(p: int) -> CoxFit:
    # a stratum with zero censorings has censoring survival identically 1
    return CoxFit(
        coefficients=np.zeros(0),
        kept=np.zeros(p, dtype=bool),
        baseline_times=np.zeros(0),
        baseline_sizes=np.zeros(0),
        event_cause=0,
        n_events=0,
        converged=True,
        n_iter=0,
        loglik=0.0,
        loglik_path=(0.0,),
    )


def fit_nuisances(
    cohort: Cohort,
    *,
    weight_cap_rule: str = "sqrt_n_log_n_over_5",
    drop_degenerate: bool = True,
) -> NuisanceSet:
    """Fit every nuisance model of the recipe on one cohort.

    Component errors are re-raised with the stratum name prefixed. Event fits
    with no events propagate that error; a censoring fit with no censorings
    is replaced by the empty hazard (censoring survival 1), since that is the
    maximum-likelihood answer rather than a failure.
    """
    rct = cohort.pop == 1
    treated = rct & (cohort.treat == 1.0)
    rct_ctrl = rct & (cohort.treat == 0.0)
    ext = ~rct
    ctrl_pool = rct_ctrl | ext

    def cox(name: str, mask: np.ndarray, cause: int, censoring: bool = False) -> CoxFit:
        try:
            return fit_cox(cohort, mask, event_cause=cause, drop_degenerate=drop_degenerate)
        except NoEventsError:
            if censoring:
                return _empty_censoring_fit(cohort.covariate_dim)
            raise NoEventsError(f"{name}: no events for cause {cause}") from None
        except Exception as exc:
            raise type(exc)(f"{name}: {exc}") from exc

    haz_interest_pooled = cox("haz_interest_pooled", ctrl_pool, 1)
    haz_comp_rct_ctrl = cox("haz_comp_rct_ctrl", rct_ctrl, 2)
    cens_rct_ctrl = cox("cens_rct_ctrl", rct_ctrl, 0, censoring=True)

    has_ext = bool(ext.any())
    haz_comp_ext = cox("haz_comp_ext", ext, 2) if has_ext else None
    cens_ext = cox("cens_ext", ext, 0, censoring=True) if has_ext else None

    has_trt = bool(treated.any())
    haz_interest_trt = cox("haz_interest_trt", treated, 1) if has_trt else None
    haz_comp_trt = cox("haz_comp_trt", treated, 2) if has_trt else None
    cens_rct_trt = cox("cens_rct_trt", treated, 0, censoring=True) if has_trt else None

    try:
        pi = fit_logistic(cohort.X, rct.astype(float)) if has_ext else LogisticFit.constant(1.0)
    except Exception as exc:
        raise type(exc)(f"pi: {exc}") from exc
    try:
        e1 = (
            fit_logistic(cohort.X[rct], cohort.treat[rct])
            if has_trt
            else LogisticFit.constant(0.0)
        )
    except Exception as exc:
        raise type(exc)(f"e1: {exc}") from exc

    return NuisanceSet(
        pi=pi,
        e1=e1,
        haz_interest_pooled=haz_interest_pooled,
        haz_comp_rct_ctrl=haz_comp_rct_ctrl,
        haz_comp_ext=haz_comp_ext,
        haz_interest_trt=haz_interest_trt,
        haz_comp_trt=haz_comp_trt,
        cens_rct_ctrl=cens_rct_ctrl,
        cens_rct_trt=cens_rct_trt,
        cens_ext=cens_ext,
        alpha_hat=cohort.alpha_hat,
        weight_cap=weight_cap_value(cohort.n, weight_cap_rule),
    )


def _predict(fit: CoxFit, x) -> CumulativeHazard:
    return predict_cum_hazard(fit, x, clamp=getattr(fit, "clamp", True))


def _cif_at(haz_cause: CumulativeHazard, haz_other: CumulativeHazard, t) -> float:
    """F(t) = sum over jumps u <= t of S_all(u-) dA_cause(u)."""
    u = haz_cause.jump_times
    s_left = product_integral_left(haz_cause, u) * product_integral_left(haz_other, u)
    cif = np.concatenate(([0.0], np.cumsum(s_left * haz_cause.jump_sizes)))
    return float(cif[np.searchsorted(u, t, side="right")])


def derived_quantities(
    ns: NuisanceSet, x, arm: int, cause: int, t: float, horizon: float
) -> dict[str, float]:
    """Reference evaluation of every displayed plug-in quantity at one (x, t).

    Survivals and the at-risk compositions H are reported as left limits at
    t; the cumulative incidence of the requested cause is reported at both t
    and the horizon; W_1j and W_2j are the time-indexed weights of the
    cause-1 and cause-2 martingale integrands evaluated at s = t for the
    target time ``horizon``. External-population quantities are NaN when the
    nuisance set has no external fits. Scalar reference implementation; the
    estimator layer vectorizes the same formulas.
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    if cause not in (1, 2):
        raise ValueError("cause must be 1 or 2")
    if not 0.0 <= t <= horizon:
        raise ValueError("need 0 <= t <= horizon")
    x = np.asarray(x, dtype=np.float64).reshape(-1)

    if arm == 1:
        if not ns.has_treated:
            raise ValueError("arm 1 requested but treated-arm nuisances are absent")
        A1 = _predict(ns.haz_interest_trt, x)
        A2 = _predict(ns.haz_comp_trt, x)
        Ac = _predict(ns.cens_rct_trt, x)
    else:
        A1 = _predict(ns.haz_interest_pooled, x)
        A2 = _predict(ns.haz_comp_rct_ctrl, x)
        Ac = _predict(ns.cens_rct_ctrl, x)

    s1_left = float(product_integral_left(A1, t) * product_integral_left(A2, t))
    s1c_left = float(product_integral_left(Ac, t))
    haz_cause = A1 if cause == 1 else A2
    haz_other = A2 if cause == 1 else A1
    f_t = _cif_at(haz_cause, haz_other, t)
    f_h = _cif_at(haz_cause, haz_other, horizon)
    f1_t = f_t if cause == 1 else _cif_at(A1, A2, t)
    f1_h = f_h if cause == 1 else _cif_at(A1, A2, horizon)
    f2_t = f_t if cause == 2 else _cif_at(A2, A1, t)
    f2_h = f_h if cause == 2 else _cif_at(A2, A1, horizon)

    p1 = float(ns.pi.predict(x[None, :])[0])
    e1p = float(ns.e1.predict(x[None, :])[0])
    e1_arm = e1p if arm == 1 else 1.0 - e1p
    h1_left = e1_arm * s1_left * s1c_left

    if ns.has_external:
        pool_ctrl = _predict(ns.haz_interest_pooled, x)
        A02 = _predict(ns.haz_comp_ext, x)
        A0c = _predict(ns.cens_ext, x)
        s0_left = float(product_integral_left(pool_ctrl, t) * product_integral_left(A02, t))
        s0c_left = float(product_integral_left(A0c, t))
        if arm == 1:
            # the control-side composition is arm-independent
            ctrl_s1_left = float(
                product_integral_left(pool_ctrl, t)
                * product_integral_left(_predict(ns.haz_comp_rct_ctrl, x), t)
            )
            ctrl_s1c_left = float(product_integral_left(_predict(ns.cens_rct_ctrl, x), t))
        else:
            ctrl_s1_left, ctrl_s1c_left = s1_left, s1c_left
        h_dot = p1 * (1.0 - e1p) * ctrl_s1_left * ctrl_s1c_left + (1.0 - p1) * s0_left * s0c_left
    else:
        s0_left = s0c_left = h_dot = math.nan

    def weight(num_f_t: float, num_f_s: float, interest: bool, d_at: float) -> float:
        lead = s1_left if interest else 0.0
        if d_at >= 1.0:
            return lead
        return lead - (num_f_t - num_f_s) / (1.0 - d_at)

    f_cause_t, f_cause_h = (f1_t, f1_h) if cause == 1 else (f2_t, f2_h)
    w_1 = weight(f_cause_h, f_cause_t, interest=cause == 1, d_at=float(A1.jump_at(t)))
    w_2 = weight(f_cause_h, f_cause_t, interest=cause == 2, d_at=float(A2.jump_at(t)))

    for name, val in (("H_1", h1_left), ("H_dot", h_dot)):
        if not math.isnan(val) and val == 0.0:
            raise PositivityError(f"positivity violation at t={t:.17g} ({name} = 0)")

    return {
        "S1": s1_left,
        "S0": s0_left,
        "F1j_at_t": f_cause_t,
        "F1j_at_horizon": f_cause_h,
        "S1c": s1c_left,
        "S0c": s0c_left,
        "H_dot": h_dot,
        "H_1": h1_left,
        "W_1j": w_1,
        "W_2j": w_2,
    }
