"""Binary logistic regression by Newton iterations with step halving.

The fit standardizes columns internally and reports natural-scale
coefficients, so affine changes of the feature columns leave predictions
unchanged up to solver tolerance. Convergence means the max-norm of the
score dropped below 1e-8 within 100 iterations; a fit that stops earlier
is returned with ``converged = False`` unless the coefficient norm has
diverged, which is reported as separation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .errors import DegenerateLabelsError, SeparationError

__all__ = ["LogisticFit", "fit_logistic"]

SCORE_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 10
SEPARATION_NORM = 1e3


@dataclass(frozen=True)
class LogisticFit:
    """Fitted intercept + slope vector; predictions via the logistic link."""

    intercept: float
    coefficients: np.ndarray
    converged: bool = True
    n_iter: int = 0
    loglik: float = np.nan

    @classmethod
    def constant(cls, p: float) -> "LogisticFit":
        """Fit-shaped object predicting probability p for every x (p may be 0 or 1)."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("constant probability must lie in [0, 1]")
        return cls(intercept=float(logit(p)), coefficients=np.zeros(0))

    def predict(self, X) -> np.ndarray:
        """P(label = 1 | x) for each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.coefficients.size == 0:
            # constant or intercept-only fit: feature width is irrelevant
            eta = np.full(X.shape[0], self.intercept)
        else:
            eta = self.intercept + X @ self.coefficients
        return expit(eta)


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def fit_logistic(features, labels) -> LogisticFit:
    """Maximum-likelihood logistic fit of labels on features plus intercept.

    Single-class labels are an error when slope columns are present; with no
    columns the one-class maximum likelihood is the infinite intercept and
    that degenerate fit is returned (predictions exactly 0 or 1).
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(labels, dtype=np.float64)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("labels must be one value per feature row")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")

    classes = np.unique(y)
    if classes.size < 2:
        if p == 0:
            return LogisticFit(
                intercept=float(logit(classes[0])),
                coefficients=np.zeros(0),
                converged=True,
                n_iter=0,
                loglik=0.0,
            )
        raise DegenerateLabelsError("degenerate labels")

    # standardize slope columns; constant columns keep scale 1 and are then
    # collinear with the intercept, which least squares tolerates
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    Z = np.column_stack([np.ones(n), (X - mean) / sd])

    beta = np.zeros(p + 1)
    eta = Z @ beta
    ll = _loglik(y, eta)
    n_iter = 0
    converged = False
    for n_iter in range(1, MAX_ITER + 1):
        prob = expit(eta)
        score = Z.T @ (y - prob)
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            n_iter -= 1
            break
        w = prob * (1.0 - prob)
        hess = Z.T @ (Z * w[:, None])
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, score, rcond=None)[0]
        accepted = False
        accepted_at_tol = False
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            cand_eta = Z @ cand
            cand_ll = _loglik(y, cand_eta)
            cand_score_ok = bool(np.max(np.abs(Z.T @ (y - expit(cand_eta)))) < SCORE_TOL)
            # near the optimum the true improvement falls below float
            # resolution of the log-likelihood; a candidate that already
            # meets the score tolerance is accepted regardless
            if np.isfinite(cand_ll) and (cand_ll >= ll or cand_score_ok):
                beta, ll, eta = cand, cand_ll, cand_eta
                accepted, accepted_at_tol = True, cand_score_ok
                break
            step = step / 2.0
        if not accepted:
            break
        _check_separation(beta, mean, sd, converged=accepted_at_tol)
    else:
        prob = expit(eta)
        score = Z.T @ (y - prob)
        converged = bool(np.max(np.abs(score)) < SCORE_TOL)

    coef = beta[1:] / sd
    intercept = beta[0] - float(mean @ coef)
    _check_separation(beta, mean, sd, converged=converged)
    return LogisticFit(
        intercept=float(intercept),
        coefficients=coef,
        converged=converged,
        n_iter=n_iter,
        loglik=ll,
    )


def _check_separation(beta: np.ndarray, mean: np.ndarray, sd: np.ndarray, converged: bool) -> None:
    if converged:
        return
    coef = beta[1:] / sd
    intercept = beta[0] - float(mean @ coef)
    norm = float(np.sqrt(intercept**2 + coef @ coef))
    if norm > SEPARATION_NORM:
        raise SeparationError("separation")
