"""Event records and cohorts for the fused two-population design.

Records come from two sources: the randomized trial (``pop = 1``, with a
treatment arm indicator) and an external cohort (``pop = 0``) that enrolls
controls only, so ``treat`` is present exactly when ``pop = 1``. Cause 0
marks censoring; causes 1 and 2 are the event of interest and the competing
event. Records with time beyond the horizon ``tau`` are kept: they remain
in every risk set on (0, tau].
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRiskSetError, TiedEventTimesError
from .hazards import CumulativeHazard

__all__ = ["EventRecord", "Cohort", "nelson_aalen"]


@dataclass(frozen=True)
class EventRecord:
    """One observed subject."""

    id: str
    time: float
    cause: int
    treat: int | None
    pop: int
    covariates: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (np.isfinite(self.time) and self.time > 0.0):
            raise ValueError(f"record {self.id!r}: time must be positive and finite")
        if self.cause not in (0, 1, 2):
            raise ValueError(f"record {self.id!r}: cause must be 0, 1 or 2")
        if self.pop not in (0, 1):
            raise ValueError(f"record {self.id!r}: pop must be 0 or 1")
        if self.pop == 0:
            if self.treat is not None:
                raise ValueError(f"record {self.id!r}: external records carry no treatment")
        elif self.treat not in (0, 1):
            raise ValueError(f"record {self.id!r}: trial records need treat in {{0, 1}}")


class Cohort:
    """Immutable column store of event records with a fixed horizon.

    ``treat`` is held as a float column with NaN for external records.
    Cause-1 and cause-2 event times must not collide across causes;
    ingestion jitters raw data before construction when they do.
    """

    __slots__ = ("ids", "times", "causes", "treat", "pop", "X", "tau", "_records")

    def __init__(self, records: Sequence[EventRecord], tau: float) -> None:
        n = len(records)
        dims = {len(r.covariates) for r in records}
        if len(dims) > 1:
            raise ValueError("records disagree on covariate dimension")
        p = dims.pop() if dims else 0
        ids = np.array([r.id for r in records], dtype=object)
        times = np.array([r.time for r in records], dtype=np.float64)
        causes = np.array([r.cause for r in records], dtype=np.int64)
        treat = np.array(
            [np.nan if r.treat is None else float(r.treat) for r in records],
            dtype=np.float64,
        )
        pop = np.array([r.pop for r in records], dtype=np.int64)
        X = np.array([r.covariates for r in records], dtype=np.float64).reshape(n, p)
        self._setup(ids, times, causes, treat, pop, X, tau)
        self._records = list(records)

    @classmethod
    def from_arrays(cls, ids, times, causes, treat, pop, X, tau: float) -> "Cohort":
        """Build a cohort directly from columns; treat is NaN for externals."""
        self = object.__new__(cls)
        self._setup(
            np.asarray(ids, dtype=object),
            np.asarray(times, dtype=np.float64),
            np.asarray(causes, dtype=np.int64),
            np.asarray(treat, dtype=np.float64),
            np.asarray(pop, dtype=np.int64),
            np.asarray(X, dtype=np.float64),
            tau,
        )
        self._records = None
        return self

    def _setup(self, ids, times, causes, treat, pop, X, tau) -> None:
        n = times.size
        if not (np.isfinite(tau) and tau > 0.0):
            raise ValueError("tau must be positive and finite")
        if times.ndim != 1 or not np.all(np.isfinite(times)) or np.any(times <= 0.0):
            raise ValueError("times must be positive and finite")
        if not np.all(np.isin(causes, (0, 1, 2))):
            raise ValueError("causes must lie in {0, 1, 2}")
        if not np.all(np.isin(pop, (0, 1))):
            raise ValueError("pop must lie in {0, 1}")
        ext = pop == 0
        if np.any(~np.isnan(treat[ext])):
            raise ValueError("external records carry no treatment")
        rct_treat = treat[~ext]
        if np.any(np.isnan(rct_treat)) or not np.all(np.isin(rct_treat, (0.0, 1.0))):
            raise ValueError("trial records need treat in {0, 1}")
        if X.ndim != 2 or X.shape[0] != n or not np.all(np.isfinite(X)):
            raise ValueError("covariates must be a finite (n, p) matrix")
        shared = np.intersect1d(times[causes == 1], times[causes == 2])
        if shared.size:
            raise TiedEventTimesError(
                f"tied cross-cause event times at t={shared[0]:.17g}"
            )
        self.ids = ids
        self.times = times
        self.causes = causes
        self.treat = treat
        self.pop = pop
        self.X = X
        self.tau = float(tau)

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def covariate_dim(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_rct(self) -> int:
        return int(np.sum(self.pop == 1))

    @property
    def n_ext(self) -> int:
        return int(np.sum(self.pop == 0))

    @property
    def alpha_hat(self) -> float:
        """Trial fraction n1 / n."""
        return self.n_rct / self.n

    @property
    def is_rct(self) -> np.ndarray:
        return self.pop == 1

    @property
    def records(self) -> list[EventRecord]:
        if self._records is None:
            self._records = [
                EventRecord(
                    id=str(self.ids[i]),
                    time=float(self.times[i]),
                    cause=int(self.causes[i]),
                    treat=None if self.pop[i] == 0 else int(self.treat[i]),
                    pop=int(self.pop[i]),
                    covariates=tuple(float(v) for v in self.X[i]),
                )
                for i in range(self.n)
            ]
        return self._records

    def subset_mask(self, subset) -> np.ndarray:
        """Resolve a subset spec (None, boolean mask, or record predicate)."""
        if subset is None:
            return np.ones(self.n, dtype=bool)
        if callable(subset):
            return np.fromiter((bool(subset(r)) for r in self.records), dtype=bool, count=self.n)
        mask = np.asarray(subset, dtype=bool)
        if mask.shape != (self.n,):
            raise ValueError("boolean subset mask must have one entry per record")
        return mask


def nelson_aalen(cohort: Cohort, cause: int, subset=None) -> CumulativeHazard:
    """Nonparametric cumulative hazard of one cause within a subset.

    dA(u) = d_cause(u) / Y(u), with Y(u) the number of subset records still
    at risk (time >= u). Same-cause ties contribute a single joint step. A
    subset with no records has no risk set at any time and is an error; a
    subset with no events of the cause yields the zero hazard.
    """
    if cause not in (0, 1, 2):
        raise ValueError("cause must be 0, 1 or 2")
    mask = cohort.subset_mask(subset)
    if not mask.any():
        raise EmptyRiskSetError("empty risk set")
    times = np.sort(cohort.times[mask])
    ev = cohort.times[mask & (cohort.causes == cause)]
    if ev.size == 0:
        return CumulativeHazard.empty()
    jump_times, counts = np.unique(ev, return_counts=True)
    at_risk = times.size - np.searchsorted(times, jump_times, side="left")
    return CumulativeHazard(jump_times, counts / at_risk)
