"""Step-function operations against hand-computed and closed-form values.

Expected numbers are frozen from independent derivations:
  - two-jump product integral: (1 - 0.1)(1 - 0.2) = 0.72
  - discretized constant hazard 0.5 on mesh 1e-4 approximates exp(-0.5)
  - Stieltjes sum of S(s-) dA(s) for jumps {(1, .5), (2, .5)}:
    1.0 * 0.5 + 0.5 * 0.5 = 0.75
  - Aalen-Johansen with a sure interest jump at 1: F(1) = 1
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cif_fusion import (
    CumulativeHazard,
    TiedEventTimesError,
    aalen_johansen,
    duhamel_residual,
    hazard_sum,
    product_integral,
    product_integral_left,
    stieltjes_integral,
)


def haz(*pairs):
    times = [p[0] for p in pairs]
    sizes = [p[1] for p in pairs]
    return CumulativeHazard(times, sizes)


@st.composite
def hazards(draw, max_jumps=50):
    n = draw(st.integers(min_value=0, max_value=max_jumps))
    times = draw(
        st.lists(
            st.floats(min_value=0.01, max_value=10.0, allow_nan=False),
            min_size=n,
            max_size=n,
            unique=True,
        )
    )
    sizes = draw(
        st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            min_size=n,
            max_size=n,
        )
    )
    return CumulativeHazard(np.sort(np.asarray(times)), sizes)


class TestEval:
    def test_single_jump_right_continuous(self):
        A = haz((1.0, 0.3))
        assert A.eval(1.0) == 0.3
        assert A.eval_left(1.0) == 0.0
        assert A.eval(0.999) == 0.0
        assert A.eval_left(1.001) == 0.3

    def test_vectorized(self):
        A = haz((1.0, 0.1), (2.0, 0.2))
        np.testing.assert_allclose(
            A.eval(np.array([0.5, 1.0, 1.5, 2.0, 3.0])),
            [0.0, 0.1, 0.1, 0.3, 0.3],
            rtol=0,
            atol=1e-15,
        )

    def test_empty(self):
        A = CumulativeHazard.empty()
        assert A.eval(5.0) == 0.0
        assert product_integral(A, 5.0) == 1.0

    def test_jump_at(self):
        A = haz((1.0, 0.1), (2.0, 0.2))
        assert A.jump_at(2.0) == 0.2
        assert A.jump_at(1.5) == 0.0
        np.testing.assert_array_equal(A.jump_at(np.array([1.0, 1.5])), [0.1, 0.0])

    @pytest.mark.parametrize(
        "times,sizes",
        [
            ([2.0, 1.0], [0.1, 0.1]),
            ([1.0, 1.0], [0.1, 0.1]),
            ([0.0, 1.0], [0.1, 0.1]),
            ([-1.0], [0.1]),
            ([1.0], [1.5]),
            ([1.0], [-0.1]),
            ([1.0], [np.nan]),
            ([np.inf], [0.5]),
        ],
    )
    def test_invalid_construction(self, times, sizes):
        with pytest.raises(ValueError):
            CumulativeHazard(times, sizes)


class TestProductIntegral:
    def test_two_jumps(self):
        A = haz((1.0, 0.1), (2.0, 0.2))
        assert product_integral(A, 2.0) == pytest.approx(0.72, abs=1e-15)
        assert product_integral(A, 1.5) == pytest.approx(0.9, abs=1e-15)
        assert product_integral_left(A, 2.0) == pytest.approx(0.9, abs=1e-15)

    def test_discretized_constant_hazard_matches_exponential(self):
        mesh = 1e-4
        grid = np.arange(1, 10001) * mesh
        A = CumulativeHazard(grid, np.full(grid.size, 0.5 * mesh))
        assert abs(float(product_integral(A, 1.0)) - math.exp(-0.5)) < 1e-3

    def test_absorbing_jump(self):
        A = haz((1.0, 1.0), (2.0, 0.5))
        assert product_integral(A, 1.0) == 0.0
        assert product_integral(A, 3.0) == 0.0
        assert product_integral_left(A, 1.0) == 1.0

    @given(hazards(), st.floats(min_value=0.0, max_value=12.0))
    @settings(max_examples=200, deadline=None)
    def test_stays_in_unit_interval_and_monotone(self, A, t):
        s = float(product_integral(A, t))
        assert 0.0 <= s <= 1.0
        assert s <= float(product_integral_left(A, t)) + 1e-15


class TestStieltjes:
    def test_survival_weighted_sum(self):
        A = haz((1.0, 0.5), (2.0, 0.5))
        val = stieltjes_integral(lambda s: product_integral_left(A, s), A, 0.0, 2.0)
        assert val == pytest.approx(0.75, abs=1e-15)

    def test_window_is_left_open_right_closed(self):
        A = haz((1.0, 0.5), (2.0, 0.5))
        assert stieltjes_integral(lambda s: 1.0, A, 1.0, 2.0) == 0.5
        assert stieltjes_integral(lambda s: 1.0, A, 0.0, 1.0) == 0.5
        assert stieltjes_integral(lambda s: 1.0, A, 2.0, 9.0) == 0.0


class TestDuhamel:
    def test_identical_hazards(self):
        A = haz((1.0, 0.3), (2.0, 0.4))
        assert duhamel_residual(A, A, 5.0) == 0.0

    def test_single_jump_vs_zero_hazard(self):
        # PI(A) - PI(0) = -0.3; sum has one term: 1 * (0 - 0.3) * 1
        A = haz((1.0, 0.3))
        Z = CumulativeHazard.empty()
        assert duhamel_residual(A, Z, 2.0) == pytest.approx(0.0, abs=1e-16)
        assert duhamel_residual(Z, A, 2.0) == pytest.approx(0.0, abs=1e-16)

    @given(hazards(), hazards(), st.floats(min_value=0.0, max_value=12.0))
    @settings(max_examples=300, deadline=None)
    def test_residual_vanishes(self, A, B, t):
        assert abs(duhamel_residual(A, B, t)) < 1e-10

    @given(hazards(max_jumps=20))
    @settings(max_examples=200, deadline=None)
    def test_backward_equation(self, A):
        # PI(A)(t) = 1 - sum_u PI((u, t]) dA(u), checked with raw suffix loops
        t = 10.5
        rhs = 1.0
        for k in range(len(A)):
            suffix = np.prod(1.0 - A.jump_sizes[k + 1 :])
            rhs -= suffix * A.jump_sizes[k]
        assert abs(float(product_integral(A, t)) - rhs) < 1e-10


class TestHazardSum:
    def test_disjoint_union(self):
        A = haz((1.0, 0.1))
        B = haz((2.0, 0.2))
        S = hazard_sum(A, B)
        assert list(S.jump_times) == [1.0, 2.0]
        assert list(S.jump_sizes) == [0.1, 0.2]

    def test_shared_time_adds(self):
        S = hazard_sum(haz((1.0, 0.1)), haz((1.0, 0.2)))
        assert S.jump_at(1.0) == pytest.approx(0.3)

    def test_shared_time_overflow_rejected(self):
        with pytest.raises(ValueError):
            hazard_sum(haz((1.0, 0.7)), haz((1.0, 0.7)))


class TestAalenJohansen:
    def test_sure_interest_jump(self):
        F = aalen_johansen(haz((1.0, 1.0)), CumulativeHazard.empty(), 1.0)
        assert F == 1.0

    def test_competing_before_interest(self):
        # S(2-) = 1 - 0.5, so the interest jump contributes 0.5 * 0.4
        F = aalen_johansen(haz((2.0, 0.4)), haz((1.0, 0.5)), 3.0)
        assert F == pytest.approx(0.2, abs=1e-15)

    def test_tied_cross_cause_rejected(self):
        with pytest.raises(TiedEventTimesError, match="tied cross-cause event times"):
            aalen_johansen(haz((1.0, 0.2)), haz((1.0, 0.3)), 2.0)

    @given(data=st.data())
    @settings(max_examples=200, deadline=None)
    def test_adding_up(self, data):
        # F1 + F2 + S = 1 when the two causes share no jump times
        A = data.draw(hazards(max_jumps=25))
        B0 = data.draw(hazards(max_jumps=25))
        keep = ~np.isin(B0.jump_times, A.jump_times)
        B = CumulativeHazard(B0.jump_times[keep], B0.jump_sizes[keep])
        t = data.draw(st.floats(min_value=0.0, max_value=12.0))
        total = (
            float(aalen_johansen(A, B, t))
            + float(aalen_johansen(B, A, t))
            + float(product_integral(hazard_sum(A, B), t))
        )
        assert abs(total - 1.0) < 1e-10
