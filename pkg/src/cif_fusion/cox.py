"""Cox proportional hazards by Newton iterations on the Breslow partial likelihood.

Ties are handled Breslow-style (tied events share one risk-set denominator),
so a fit with no covariates reproduces the Nelson-Aalen increments exactly.
Covariates are standardized internally and reported on the natural scale;
the Breslow baseline is stored unclamped, and jump clamping to 1 - exp(-dA)
happens at prediction time so every predicted hazard is a valid step
function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .errors import DegenerateDesignError, DegenerateDesignWarning, NoEventsError
from .hazards import CumulativeHazard

__all__ = ["CoxFit", "fit_cox", "predict_cum_hazard"]

SCORE_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 10


@dataclass(frozen=True)
class CoxFit:
    """Fitted cause-specific proportional hazards model.

    ``kept`` masks the cohort covariate columns that entered the design;
    ``coefficients`` has one entry per kept column. ``baseline_times`` and
    ``baseline_sizes`` are the Breslow increments at the fitted coefficients
    and are not clamped (individual predicted jumps may exceed 1 until
    clamping at prediction). ``clamp`` records whether downstream consumers
    should clamp predicted jumps; hand-built wrappers around hazards whose
    jumps are already probabilities (empirical increments) set it False.
    """

    coefficients: np.ndarray
    kept: np.ndarray
    baseline_times: np.ndarray
    baseline_sizes: np.ndarray
    event_cause: int
    n_events: int
    converged: bool
    n_iter: int
    loglik: float
    loglik_path: tuple[float, ...]
    clamp: bool = True

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.coefficients.size == 0:
            return np.zeros(x.shape[:-1] if x.ndim > 1 else ())
        return x[..., self.kept] @ self.coefficients


def _risk_stats(eta, Xk, event_starts, event_counts, want_derivs):
    """Breslow log-likelihood pieces from reverse cumulative risk sums."""
    shift = float(eta.max()) if eta.size else 0.0
    w = np.exp(eta - shift)
    rs0 = np.cumsum(w[::-1])[::-1]
    denom0 = rs0[event_starts]
    ll = -float(event_counts @ (np.log(denom0) + shift))
    if not want_derivs:
        return ll, None, None
    p = Xk.shape[1]
    rs1 = np.cumsum((w[:, None] * Xk)[::-1], axis=0)[::-1]
    xbar = rs1[event_starts] / denom0[:, None]
    score = -event_counts @ xbar
    outer = w[:, None, None] * (Xk[:, :, None] * Xk[:, None, :])
    rs2 = np.cumsum(outer[::-1], axis=0)[::-1]
    vbar = rs2[event_starts] / denom0[:, None, None] - xbar[:, None, :] * xbar[:, :, None]
    info = np.tensordot(event_counts, vbar, axes=1)
    return ll, score, info


def fit_cox(cohort: Cohort, subset=None, event_cause: int = 1, drop_degenerate: bool = False) -> CoxFit:
    """Fit a cause-specific Cox model on a subset of the cohort.

    Records of any other cause (including censoring) are treated as censored
    at their time. A constant covariate column within the subset is an error
    unless ``drop_degenerate`` is set, in which case offending columns are
    dropped with a warning and excluded from the design (the fit records
    which columns survived).
    """
    if event_cause not in (0, 1, 2):
        raise ValueError("event_cause must be 0, 1 or 2")
    mask = cohort.subset_mask(subset)
    times = cohort.times[mask]
    events = cohort.causes[mask] == event_cause
    X = cohort.X[mask]
    n = times.size
    if int(events.sum()) == 0:
        raise NoEventsError(f"no events for cause {event_cause} in fitting subset")

    p_full = X.shape[1]
    spread = np.ptp(X, axis=0) if n else np.zeros(p_full)
    kept = spread > 0.0
    if not drop_degenerate and not kept.all():
        bad = np.flatnonzero(~kept)
        raise DegenerateDesignError(f"degenerate design: constant column(s) {bad.tolist()}")
    if drop_degenerate and not kept.all():
        bad = np.flatnonzero(~kept)
        warnings.warn(
            f"dropping constant design column(s) {bad.tolist()} from Cox fit",
            DegenerateDesignWarning,
            stacklevel=2,
        )
    Xk_raw = X[:, kept]
    p = Xk_raw.shape[1]

    order = np.argsort(times, kind="stable")
    ts = times[order]
    ev = events[order]
    Xs = Xk_raw[order]

    event_times, event_counts = np.unique(ts[ev], return_counts=True)
    event_counts = event_counts.astype(np.float64)
    event_starts = np.searchsorted(ts, event_times, side="left")

    mean = Xs.mean(axis=0) if p else np.zeros(0)
    sd = Xs.std(axis=0) if p else np.zeros(0)
    sd = np.where(sd > 0.0, sd, 1.0)
    Z = (Xs - mean) / sd

    beta = np.zeros(p)
    path = []
    n_iter = 0
    converged = p == 0
    eta = Z @ beta
    ll_risk, score, info = _risk_stats(eta, Z, event_starts, event_counts, want_derivs=p > 0)
    ll = float(eta[ev].sum()) + ll_risk
    path.append(ll)
    if p > 0:
        score = Z[ev].sum(axis=0) + score
        for n_iter in range(1, MAX_ITER + 1):
            if np.max(np.abs(score)) < SCORE_TOL:
                converged = True
                n_iter -= 1
                break
            try:
                step = np.linalg.solve(info, score)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(info, score, rcond=None)[0]
            accepted = False
            for _ in range(MAX_HALVINGS + 1):
                cand = beta + step
                cand_eta = Z @ cand
                cand_ll_risk, cand_score, cand_info = _risk_stats(
                    cand_eta, Z, event_starts, event_counts, want_derivs=True
                )
                cand_ll = float(cand_eta[ev].sum()) + cand_ll_risk
                cand_score = Z[ev].sum(axis=0) + cand_score
                # accept a candidate that already meets the score tolerance
                # even when the likelihood gain is below float resolution
                cand_score_ok = bool(np.max(np.abs(cand_score)) < SCORE_TOL)
                if np.isfinite(cand_ll) and (cand_ll >= ll or cand_score_ok):
                    beta, eta, ll = cand, cand_eta, cand_ll
                    score, info = cand_score, cand_info
                    accepted = True
                    break
                step = step / 2.0
            if not accepted:
                converged = bool(np.max(np.abs(score)) < SCORE_TOL)
                break
            path.append(ll)
        else:
            converged = bool(np.max(np.abs(score)) < SCORE_TOL)

    coef = beta / sd if p else np.zeros(0)
    # Breslow baseline on the natural scale: same eta convention as prediction
    eta_nat = Xs @ coef if p else np.zeros(n)
    shift = float(eta_nat.max()) if n else 0.0
    w = np.exp(eta_nat - shift)
    rs0 = np.cumsum(w[::-1])[::-1]
    base_sizes = event_counts * np.exp(-shift) / rs0[event_starts]

    return CoxFit(
        coefficients=coef,
        kept=kept,
        baseline_times=event_times,
        baseline_sizes=base_sizes,
        event_cause=int(event_cause),
        n_events=int(events.sum()),
        converged=bool(converged),
        n_iter=n_iter,
        loglik=float(ll),
        loglik_path=tuple(path),
    )


def predict_cum_hazard(fit: CoxFit, x, clamp: bool = True) -> CumulativeHazard:
    """Cumulative hazard for covariates x from a fitted Cox model.

    Raw jump sizes are baseline increments scaled by exp(coef . x). With
    ``clamp`` each jump d is replaced by 1 - exp(-d), which keeps it inside
    [0, 1); without clamping, a raw jump above 1 fails hazard construction.
    """
    lp = float(fit.linear_predictor(np.asarray(x, dtype=np.float64).reshape(-1)))
    sizes = fit.baseline_sizes * np.exp(lp)
    if clamp:
        sizes = -np.expm1(-sizes)
    return CumulativeHazard(fit.baseline_times, sizes)
