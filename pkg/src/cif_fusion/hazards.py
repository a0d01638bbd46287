"""Step-function cumulative hazards and product-integral operations.

A cumulative hazard here is a nondecreasing cadlag step function
``A(t) = sum of jump sizes at jump times <= t`` with ``A(0) = 0``. Jump
sizes are restricted to [0, 1] so that every survival factor ``1 - dA(s)``
lies in [0, 1] and product integrals are valid survival functions. Left
limits ``A(t-)`` sum the jumps strictly before ``t``.

All evaluators accept a scalar time or an array of times.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .errors import TiedEventTimesError

__all__ = [
    "CumulativeHazard",
    "product_integral",
    "product_integral_left",
    "stieltjes_integral",
    "duhamel_residual",
    "hazard_sum",
    "aalen_johansen",
]


class CumulativeHazard:
    """Immutable step cumulative hazard with jumps in [0, 1]."""

    __slots__ = ("jump_times", "jump_sizes", "_cum_sizes", "_cum_surv")

    def __init__(self, jump_times, jump_sizes) -> None:
        times = np.atleast_1d(np.asarray(jump_times, dtype=np.float64))
        sizes = np.atleast_1d(np.asarray(jump_sizes, dtype=np.float64))
        if times.ndim != 1 or times.shape != sizes.shape:
            raise ValueError("jump_times and jump_sizes must be 1-d arrays of equal length")
        if times.size:
            if not np.all(np.isfinite(times)) or times[0] <= 0.0:
                raise ValueError("jump times must be positive and finite")
            if np.any(np.diff(times) <= 0.0):
                raise ValueError("jump times must be strictly increasing")
            if not np.all(np.isfinite(sizes)) or np.any(sizes < 0.0) or np.any(sizes > 1.0):
                raise ValueError("jump sizes must lie in [0, 1]")
        self.jump_times = times
        self.jump_sizes = sizes
        # prefix tables with an identity entry in front: index k holds the
        # value after the first k jumps
        self._cum_sizes = np.concatenate(([0.0], np.cumsum(sizes)))
        self._cum_surv = np.concatenate(([1.0], np.cumprod(1.0 - sizes)))

    @classmethod
    def empty(cls) -> "CumulativeHazard":
        return cls(np.empty(0), np.empty(0))

    def __len__(self) -> int:
        return int(self.jump_times.size)

    def __repr__(self) -> str:
        return f"CumulativeHazard({len(self)} jumps, total={self._cum_sizes[-1]:.6g})"

    def eval(self, t):
        """A(t): jump mass on (0, t]."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self._cum_sizes[idx]

    def eval_left(self, t):
        """A(t-): jump mass on (0, t)."""
        idx = np.searchsorted(self.jump_times, t, side="left")
        return self._cum_sizes[idx]

    def jump_at(self, t):
        """dA(t): jump size exactly at t, zero off the jump set."""
        t_arr = np.asarray(t, dtype=np.float64)
        out = np.zeros(t_arr.shape, dtype=np.float64)
        if self.jump_times.size:
            idx = np.searchsorted(self.jump_times, t_arr, side="left")
            idx_c = np.minimum(idx, self.jump_times.size - 1)
            match = self.jump_times[idx_c] == t_arr
            out[match] = self.jump_sizes[idx_c[match]]
        if np.isscalar(t) or t_arr.ndim == 0:
            return float(out)
        return out


def product_integral(A: CumulativeHazard, t):
    """Survival product integral: product over s <= t of (1 - dA(s))."""
    idx = np.searchsorted(A.jump_times, t, side="right")
    return A._cum_surv[idx]


def product_integral_left(A: CumulativeHazard, t):
    """Left limit of the survival product integral: product over s < t."""
    idx = np.searchsorted(A.jump_times, t, side="left")
    return A._cum_surv[idx]


def stieltjes_integral(f: Callable[[float], float], A: CumulativeHazard, lower: float, upper: float) -> float:
    """Lebesgue-Stieltjes sum of f(s) dA(s) over jump times s in (lower, upper]."""
    lo = np.searchsorted(A.jump_times, lower, side="right")
    hi = np.searchsorted(A.jump_times, upper, side="right")
    times = A.jump_times[lo:hi]
    sizes = A.jump_sizes[lo:hi]
    if times.size == 0:
        return 0.0
    vals = np.array([float(f(s)) for s in times], dtype=np.float64)
    return float(vals @ sizes)


def duhamel_residual(A: CumulativeHazard, B: CumulativeHazard, t: float) -> float:
    """Residual of the Duhamel product-difference identity at t.

    PI(A)(t) - PI(B)(t) equals the sum over jump times u <= t of
    PI(A)(u-) (dB(u) - dA(u)) PI(B)((u, t]). Returns left side minus right
    side; zero in exact arithmetic for any pair of hazards.
    """
    u = np.union1d(
        A.jump_times[A.jump_times <= t],
        B.jump_times[B.jump_times <= t],
    )
    lhs = float(product_integral(A, t)) - float(product_integral(B, t))
    if u.size == 0:
        return lhs
    pa_left = product_integral_left(A, u)
    diff = B.jump_at(u) - A.jump_at(u)
    # suffix products of 1 - dB over B's own jumps in (u, t], computed by a
    # reversed cumulative product so zero factors never force a division
    n_b = int(np.searchsorted(B.jump_times, t, side="right"))
    factors = 1.0 - B.jump_sizes[:n_b]
    suffix = np.concatenate((np.cumprod(factors[::-1])[::-1], [1.0]))
    pb_after = suffix[np.searchsorted(B.jump_times[:n_b], u, side="right")]
    rhs = float(np.sum(pa_left * diff * pb_after))
    return lhs - rhs


def hazard_sum(A: CumulativeHazard, B: CumulativeHazard) -> CumulativeHazard:
    """All-cause hazard: jump set is the union, sizes add at shared times."""
    times = np.union1d(A.jump_times, B.jump_times)
    return CumulativeHazard(times, A.jump_at(times) + B.jump_at(times))


def aalen_johansen(haz_interest: CumulativeHazard, haz_competing: CumulativeHazard, t):
    """Cumulative incidence of the interest cause from two cause-specific hazards.

    F(t) = sum over jump times u <= t of S(u-) dA_interest(u), where S is the
    product integral of both hazards together. A shared jump time across the
    two causes has no product-limit decomposition and is rejected.
    """
    shared = np.intersect1d(haz_interest.jump_times, haz_competing.jump_times)
    if shared.size:
        raise TiedEventTimesError(f"tied cross-cause event times at t={shared[0]:.17g}")
    u = haz_interest.jump_times
    s_left = product_integral_left(haz_interest, u) * product_integral_left(haz_competing, u)
    cif = np.concatenate(([0.0], np.cumsum(s_left * haz_interest.jump_sizes)))
    return cif[np.searchsorted(u, t, side="right")]
