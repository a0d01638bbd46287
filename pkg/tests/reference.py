"""Slow per-record reference for the influence engine.

Written directly from the counting-process definitions: one hazard object
per record, explicit loops over each channel's own jump times, left limits
via the hazard primitives. No union grid, no prefix decomposition, so it
shares no structure with the chunked engine it checks.
"""

import numpy as np

from cif_fusion.cox import predict_cum_hazard
from cif_fusion.hazards import product_integral, product_integral_left


def _haz(fit, x):
    return predict_cum_hazard(fit, x, clamp=fit.clamp)


class _Curves:
    """Cause hazards, censoring hazard and their derived curves for one x."""

    def __init__(self, a1, a2, ac):
        self.a1, self.a2, self.ac = a1, a2, ac
        self._cif = {}
        for j, (a_cause, _) in {1: (a1, a2), 2: (a2, a1)}.items():
            u = a_cause.jump_times
            s_left = np.array([self.s1_left(v) for v in u])
            prefix = np.concatenate([[0.0], np.cumsum(s_left * a_cause.jump_sizes)])
            self._cif[j] = (u, prefix)

    def s1_left(self, u):
        return product_integral_left(self.a1, u) * product_integral_left(self.a2, u)

    def s1(self, u):
        return product_integral(self.a1, u) * product_integral(self.a2, u)

    def s1c_left(self, u):
        return product_integral_left(self.ac, u)

    def f(self, j, u):
        times, prefix = self._cif[j]
        return float(prefix[np.searchsorted(times, u, side="right")])


class RefEvaluator:
    """Influence values for one (arm, mode) via direct per-record loops."""

    def __init__(self, cohort, ns, arm, mode):
        self.cohort = cohort
        self.ns = ns
        self.arm = arm
        self.mode = mode
        self.cap = ns.weight_cap
        self.alpha = ns.alpha_hat
        self._curves = {}
        self._ext = {}

    def _curves_for(self, i):
        if i not in self._curves:
            x = self.cohort.X[i]
            ns = self.ns
            if self.arm == 1:
                cur = _Curves(
                    _haz(ns.haz_interest_trt, x),
                    _haz(ns.haz_comp_trt, x),
                    _haz(ns.cens_rct_trt, x),
                )
            else:
                cur = _Curves(
                    _haz(ns.haz_interest_pooled, x),
                    _haz(ns.haz_comp_rct_ctrl, x),
                    _haz(ns.cens_rct_ctrl, x),
                )
            self._curves[i] = cur
            if self.mode == "fusion" and self.arm == 0:
                self._ext[i] = (
                    _haz(ns.haz_comp_ext, x),
                    _haz(ns.cens_ext, x),
                )
        return self._curves[i]

    def _weights(self, i):
        """(pi, e1_arm, e1_ctrl) for record i."""
        x = self.cohort.X[i][None, :]
        pi_i = float(self.ns.pi.predict(x)[0])
        e1p = float(self.ns.e1.predict(x)[0])
        e1_arm = e1p if self.arm == 1 else 1.0 - e1p
        return pi_i, e1_arm, 1.0 - e1p

    def value(self, i, family, cause, t):
        cur = self._curves_for(i)
        pi_i, e1_arm, e1_ctrl = self._weights(i)
        ti = float(self.cohort.times[i])
        ji = int(self.cohort.causes[i])
        d_i = 1.0 if self.cohort.pop[i] == 1 else 0.0
        a_i = 0.0 if np.isnan(self.cohort.treat[i]) else float(self.cohort.treat[i])

        def h1_inv(u):
            h = e1_arm * cur.s1_left(u) * cur.s1c_left(u)
            return min(1.0 / h, self.cap) if h > 0 else 0.0

        if self.mode == "fusion" and self.arm == 0:
            ext2, extc = self._ext[i]

            def hdot_inv(u):
                s0 = product_integral_left(cur.a1, u) * product_integral_left(ext2, u)
                s0c = product_integral_left(extc, u)
                h = pi_i * e1_ctrl * cur.s1_left(u) * cur.s1c_left(u) + (1.0 - pi_i) * s0 * s0c
                return min(1.0 / h, self.cap) if h > 0 else 0.0

            channels = [
                (cur.a1, hdot_inv, 1, (1.0 - a_i) * pi_i / self.alpha),
                (cur.a2, h1_inv, 2, d_i * (1.0 - a_i) / self.alpha),
            ]
        else:
            coef = d_i * (a_i if self.arm == 1 else 1.0 - a_i) / self.alpha
            channels = [(cur.a1, h1_inv, 1, coef), (cur.a2, h1_inv, 2, coef)]

        if family == "surv":
            plug = cur.s1(t)
        else:
            plug = cur.f(cause, t)

        def weight(a_ch, ch_cause, u):
            dsz = float(a_ch.jump_at(u))
            if family == "surv":
                return -plug / (1.0 - dsz) if dsz < 1.0 else 0.0
            lead = cur.s1_left(u) if cause == ch_cause else 0.0
            if dsz >= 1.0:
                return lead
            return lead - (plug - cur.f(cause, u)) / (1.0 - dsz)

        total = d_i / self.alpha * plug
        for a_ch, inv, ch_cause, coef in channels:
            if coef == 0.0:
                continue
            if ji == ch_cause and ti <= t:
                total += coef * weight(a_ch, ch_cause, ti) * inv(ti)
            horizon = min(ti, t)
            for u, dsz in zip(a_ch.jump_times, a_ch.jump_sizes):
                if u > horizon:
                    break
                total -= coef * weight(a_ch, ch_cause, u) * inv(u) * dsz
        return total

    def gamma(self, i, cause, t):
        cur = self._curves_for(i)
        ti = float(self.cohort.times[i])
        pts = {0.0, t}
        if ti < t:
            pts.add(ti)
        for a_ch in (cur.a1, cur.a2):
            pts.update(u for u in a_ch.jump_times if u < t)
        pts = sorted(pts)
        return sum(
            (b - a) * self.value(i, "theta", cause, a) for a, b in zip(pts[:-1], pts[1:])
        )
