"""One-step estimators and per-record influence values for cumulative
incidence, its restricted-time integral, and all-cause survival.

Everything is exact Lebesgue-Stieltjes summation over the jumps of the
fitted hazards; there is no evaluation grid and no quadrature. Within one
treatment-arm pass all per-record hazards share their stratum's jump times,
so records are laid out as (record, jump) matrices over the union of those
times, processed in chunks to bound memory. Counting-process integrals
split into a dN gather at each record's own transition time and a
compensator prefix sum; the time-t dependence of the martingale weights is
affine in the plug-in incidence at t, so one set of prefix arrays serves
every requested target time. Inverse at-risk compositions 1/H are capped at
the nuisance weight cap; hazard jumps are clamped to 1 - exp(-dA) for fits
that request it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .errors import NumericalError, PositivityError
from .nuisance import NuisanceSet

__all__ = [
    "Z95",
    "Target",
    "InfluenceVector",
    "EstimateReport",
    "ReductionReport",
    "influence_theta",
    "influence_gamma",
    "estimate",
    "estimate_all",
    "variance_reduction",
]

Z95 = 1.959964

FAMILIES = ("theta", "gamma", "surv")
MODES = ("fusion", "rct-only")

_CHUNK_BUDGET_BYTES = 512 * 1024 * 1024
_CHUNK_ARRAYS = 30
_MIN_CHUNK = 16


@dataclass(frozen=True)
class Target:
    """What to estimate: cumulative incidence ('theta'), its time integral
    ('gamma'), or all-cause survival ('surv', cause 0) for one arm or the
    arm-1 minus arm-0 effect."""

    family: str
    cause: int
    arm: int | str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.family == "surv":
            if self.cause != 0:
                raise ValueError("survival targets use cause 0")
        elif self.cause not in (1, 2):
            raise ValueError("cause must be 1 or 2")
        if self.arm not in (0, 1, "effect"):
            raise ValueError("arm must be 0, 1 or 'effect'")

    def label(self) -> str:
        """Report label, e.g. ``theta1(0)`` for an arm or ``theta1{t}`` for
        the arm contrast."""
        stem = "surv" if self.family == "surv" else f"{self.family}{self.cause}"
        return stem + ("{t}" if self.arm == "effect" else f"({self.arm})")

    @classmethod
    def from_label(cls, text: str) -> "Target":
        suffixes = {"(0)": 0, "(1)": 1, "{t}": "effect"}
        stem, arm = text[:-3], suffixes.get(text[-3:])
        if arm is None:
            raise ValueError(f"unknown target label {text!r}")
        if stem == "surv":
            return cls("surv", 0, arm)
        if stem[:-1] in ("theta", "gamma") and stem[-1:] in "12":
            return cls(stem[:-1], int(stem[-1]), arm)
        raise ValueError(f"unknown target label {text!r}")


@dataclass(frozen=True, eq=False)
class InfluenceVector:
    target: Target
    time: float
    mode: str
    values: np.ndarray


@dataclass(frozen=True)
class EstimateReport:
    target: Target
    time: float
    mode: str
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_used: int


@dataclass(frozen=True)
class ReductionReport:
    """Asymptotic variance removed by pooling external controls, for the
    arm-0 cause-1 incidence at the given time, and the same quantity
    relative to the trial-only influence variance."""

    time: float
    reduction: float
    rct_only_variance: float
    relative: float


def _validate(cohort: Cohort, t: float, mode: str) -> float:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    t = float(t)
    if not 0.0 <= t <= cohort.tau:
        raise ValueError(f"t must be within [0, {cohort.tau:g}]")
    return t


def _gather(mat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(mat, idx[:, None], axis=1)[:, 0]


def _capped_inverse(h: np.ndarray, cap: float) -> np.ndarray:
    inv = np.divide(1.0, h, out=np.zeros_like(h), where=h > 0.0)
    np.minimum(inv, cap, out=inv)
    return inv


def _arm_pass(cohort, ns, arm, reqs, reduction_time=None):
    """Influence values for same-arm requests in one pass over the cohort.

    reqs: (family, cause, time, mode) tuples. Returns (dict of request ->
    values, reduction integrand values or None).
    """
    n = cohort.n
    alpha = ns.alpha_hat
    cap = ns.weight_cap
    need_fusion = reduction_time is not None or any(m == "fusion" for (_, _, _, m) in reqs)

    if arm == 1:
        if not ns.has_treated:
            raise ValueError("arm 1 requested but treated-arm nuisances are absent")
        fits = {
            "int": ns.haz_interest_trt,
            "comp": ns.haz_comp_trt,
            "cens": ns.cens_rct_trt,
        }
        need_fusion = False
    else:
        fits = {
            "int": ns.haz_interest_pooled,
            "comp": ns.haz_comp_rct_ctrl,
            "cens": ns.cens_rct_ctrl,
        }
    if need_fusion:
        if not ns.has_external:
            raise ValueError("fusion mode requires external-control nuisances")
        fits["ecomp"] = ns.haz_comp_ext
        fits["ecens"] = ns.cens_ext

    times = sorted({t for (_, _, t, _) in reqs} | ({reduction_time} if reduction_time is not None else set()))
    t_max = times[-1]

    cut_times = {}
    for name, fit in fits.items():
        bt = fit.baseline_times
        cut_times[name] = bt[: np.searchsorted(bt, t_max, side="right")]
    g = np.unique(np.concatenate(list(cut_times.values())))
    G = g.size
    pos = {name: np.searchsorted(g, ct) for name, ct in cut_times.items()}
    base = {name: fits[name].baseline_sizes[: cut_times[name].size] for name in fits}
    eta = {name: np.exp(fits[name].linear_predictor(cohort.X)) for name in fits}

    pi_hat = ns.pi.predict(cohort.X)
    e1p = ns.e1.predict(cohort.X)
    d_ind = (cohort.pop == 1).astype(np.float64)
    a_eff = np.where(np.isnan(cohort.treat), 0.0, cohort.treat)
    d_over_alpha = d_ind / alpha

    if arm == 1:
        coef_trt = d_ind * a_eff / alpha
        chan_sets = {
            "fusion": (("int", "h1", 1, coef_trt), ("comp", "h1", 2, coef_trt)),
        }
        chan_sets["rct-only"] = chan_sets["fusion"]
    else:
        coef_ctrl = d_ind * (1.0 - a_eff) / alpha
        rct_chans = (("int", "h1", 1, coef_ctrl), ("comp", "h1", 2, coef_ctrl))
        chan_sets = {"rct-only": rct_chans}
        if need_fusion:
            coef_pool = (1.0 - a_eff) * pi_hat / alpha
            chan_sets["fusion"] = (
                ("int", "dot", 1, coef_pool),
                ("comp", "h1", 2, coef_ctrl),
            )
    active_chans = {}
    for _, _, _, m in reqs:
        for ch in chan_sets[m]:
            active_chans[(ch[0], ch[1])] = ch
    if reduction_time is not None:
        for ch in chan_sets["fusion"]:
            active_chans[(ch[0], ch[1])] = ch

    kt_by_time = {t: int(np.searchsorted(g, t, side="right")) for t in times}
    kt_max = kt_by_time[t_max]

    out = {r: np.empty(n) for r in reqs}
    red_vals = np.empty(n) if reduction_time is not None else None

    ti_all = cohort.times
    ji_all = cohort.causes

    chunk = max(_MIN_CHUNK, int(_CHUNK_BUDGET_BYTES // (_CHUNK_ARRAYS * 8 * (G + 1))))
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        c = sl.stop - sl.start
        ti = ti_all[sl]
        ji = ji_all[sl]

        d = {}
        for name in fits:
            m = np.zeros((c, G))
            raw = eta[name][sl, None] * base[name][None, :]
            if raw.size:
                if fits[name].clamp:
                    m[:, pos[name]] = -np.expm1(-raw)
                else:
                    if np.any(raw > 1.0):
                        raise NumericalError("unclamped hazard jump above 1")
                    m[:, pos[name]] = raw
            d[name] = m

        ones = np.ones((c, 1))
        zeros = np.zeros((c, 1))

        def prodext(q):
            return np.concatenate([ones, np.cumprod(q, axis=1)], axis=1)

        def sumext(v):
            return np.concatenate([zeros, np.cumsum(v, axis=1)], axis=1)

        s1ext = prodext((1.0 - d["int"]) * (1.0 - d["comp"]))
        s1cext = prodext(1.0 - d["cens"])
        f1ext = sumext(s1ext[:, :G] * d["int"])
        f2ext = sumext(s1ext[:, :G] * d["comp"])
        fext = {1: f1ext, 2: f2ext}

        e1_arm = e1p[sl] if arm == 1 else 1.0 - e1p[sl]
        h_raw = {"h1": e1_arm[:, None] * s1ext * s1cext}
        if need_fusion:
            s0ext = prodext((1.0 - d["int"]) * (1.0 - d["ecomp"]))
            s0cext = prodext(1.0 - d["ecens"])
            h_raw["dot"] = (pi_hat[sl] * (1.0 - e1p[sl]))[:, None] * s1ext * s1cext + (
                1.0 - pi_hat[sl]
            )[:, None] * s0ext * s0cext
        w = {name: _capped_inverse(h, cap) for name, h in h_raw.items()}

        idx_l = np.searchsorted(g, ti, side="left")
        idx_r = np.searchsorted(g, ti, side="right")
        has_jump_at_t = idx_r > idx_l
        s1_tl = _gather(s1ext, idx_l)
        f_tr = {1: _gather(f1ext, idx_r), 2: _gather(f2ext, idx_r)}

        prims = {}
        for key, (dname, wname, ch_cause, coef) in active_chans.items():
            dm = d[dname]
            wm = w[wname]
            _positivity_guard(h_raw[wname], dm, coef[sl], idx_r, idx_l, kt_max, ti, ji, ch_cause, t_max, g)
            denom = np.where(dm < 1.0, 1.0 - dm, 1.0)
            ratio = np.where(dm < 1.0, dm / denom, 0.0) * wm[:, :G]
            if G:
                d_at_t = np.where(has_jump_at_t, _gather(dm, np.minimum(idx_l, G - 1)), 0.0)
            else:
                d_at_t = np.zeros(c)
            prims[key] = {
                "U": sumext(s1ext[:, :G] * wm[:, :G] * dm),
                "V1": sumext(f1ext[:, 1:] * ratio),
                "V2": sumext(f2ext[:, 1:] * ratio),
                "C2": sumext(ratio),
                "dT": d_at_t,
                "ratT": np.where(d_at_t < 1.0, 1.0 / np.where(d_at_t < 1.0, 1.0 - d_at_t, 1.0), 0.0),
                "wT": _gather(wm, idx_l),
            }

        for req in reqs:
            family, cause, t, mode = req
            kt = kt_by_time[t]
            plug_t = s1ext[:, kt] if family == "surv" else fext[cause][:, kt]
            if family in ("theta", "surv"):
                acc = np.zeros(c)
                for dname, wname, ch_cause, coef in chan_sets[mode]:
                    p = prims[(dname, wname)]
                    stop = np.minimum(idx_r, kt)
                    c2_s = _gather(p["C2"], stop)
                    fired = (ji == ch_cause) & (ti <= t)
                    if family == "surv":
                        comp = -plug_t * c2_s
                        wdn = -plug_t * p["ratT"]
                    else:
                        ind = 1.0 if cause == ch_cause else 0.0
                        vj_s = _gather(p["V1" if cause == 1 else "V2"], stop)
                        comp = ind * _gather(p["U"], stop) + vj_s - plug_t * c2_s
                        wdn = ind * s1_tl - (plug_t - f_tr[cause]) * p["ratT"]
                    dn = np.where(fired, wdn * p["wT"], 0.0)
                    acc += coef[sl] * (dn - comp)
                out[req][sl] = acc + d_over_alpha[sl] * plug_t
            else:
                fseg = fext[cause][:, : kt + 1]
                edges_lo = np.concatenate([[0.0], g[:kt]])
                edges_hi = np.concatenate([g[:kt], [t]]) if kt else np.array([t])
                seg_len = edges_hi - edges_lo
                below_frac = np.clip(np.minimum(edges_hi[None, :], ti[:, None]) - edges_lo[None, :], 0.0, None)
                lb = np.minimum(below_frac, seg_len[None, :])
                la = seg_len[None, :] - lb
                below = np.zeros((c, kt + 1))
                above = np.zeros((c, kt + 1))
                for dname, wname, ch_cause, coef in chan_sets[mode]:
                    p = prims[(dname, wname)]
                    ind = 1.0 if cause == ch_cause else 0.0
                    vj = p["V1" if cause == 1 else "V2"]
                    below -= coef[sl, None] * (
                        ind * p["U"][:, : kt + 1] + vj[:, : kt + 1] - fseg * p["C2"][:, : kt + 1]
                    )
                    fired = ji == ch_cause
                    dn_const = np.where(fired, (ind * s1_tl + f_tr[cause] * p["ratT"]) * p["wT"], 0.0)
                    dn_slope = np.where(fired, p["ratT"] * p["wT"], 0.0)
                    u_t = ind * _gather(p["U"], idx_r) + _gather(vj, idx_r)
                    c2_t = _gather(p["C2"], idx_r)
                    above += coef[sl, None] * (
                        (dn_const - u_t)[:, None] + fseg * (c2_t - dn_slope)[:, None]
                    )
                plug = d_over_alpha[sl, None] * fseg
                below += plug
                above += plug
                out[req][sl] = np.sum(lb * below + la * above, axis=1)

        if reduction_time is not None:
            ktr = kt_by_time[reduction_time]
            dm = d["int"]
            denom = np.where(dm < 1.0, 1.0 - dm, 1.0)
            inv_one_minus = np.where(dm < 1.0, 1.0 / denom, 0.0)
            w_red = s1ext[:, :G] - (f1ext[:, ktr][:, None] - f1ext[:, 1:]) * inv_one_minus
            integ = (
                (s0ext * s0cext)[:, :G]
                * w["h1"][:, :G]
                * w["dot"][:, :G]
                * w_red**2
                * (1.0 - dm)
                * dm
            )
            red_sum = integ[:, :ktr].sum(axis=1)
            red_vals[sl] = pi_hat[sl] * (1.0 - pi_hat[sl]) / alpha**2 * red_sum

    return out, red_vals


def _positivity_guard(h_raw, dm, coef, idx_r, idx_l, kt_max, ti, ji, ch_cause, t_max, g):
    """A zero at-risk composition is only an error where the channel uses it."""
    G = dm.shape[1]
    if G and np.any(h_raw[:, :G] == 0.0):
        used = (dm > 0.0) & (h_raw[:, :G] == 0.0)
        used &= np.arange(G)[None, :] < np.minimum(idx_r, kt_max)[:, None]
        used &= (coef != 0.0)[:, None]
        if np.any(used):
            k = int(np.argwhere(used)[0][1])
            raise PositivityError(f"positivity violation at t={g[k]:.17g}")
    h_at_t = _gather(h_raw, idx_l)
    bad = (h_at_t == 0.0) & (ji == ch_cause) & (ti <= t_max) & (coef != 0.0)
    if np.any(bad):
        t_bad = float(ti[np.argwhere(bad)[0][0]])
        raise PositivityError(f"positivity violation at t={t_bad:.17g}")


def _base_requests(family, cause, arm, t, mode):
    if arm == "effect":
        return [(family, cause, 1, t, "rct-only"), (family, cause, 0, t, mode)]
    if arm == 1:
        return [(family, cause, 1, t, "rct-only")]
    return [(family, cause, 0, t, mode)]


def _influence_values(cohort, ns, reqs):
    """reqs: (family, cause, arm, time, mode) with arm 0, 1 or 'effect'."""
    base = {}
    for r in reqs:
        for b in _base_requests(*r):
            base[b] = None
    vals = {}
    for arm in (0, 1):
        arm_reqs = [(f, c, t, m) for (f, c, a, t, m) in base if a == arm]
        if arm_reqs:
            got, _ = _arm_pass(cohort, ns, arm, arm_reqs)
            vals.update({(f, c, arm, t, m): v for (f, c, t, m), v in got.items()})
    out = {}
    for r in reqs:
        family, cause, arm, t, mode = r
        if arm == "effect":
            out[r] = (
                vals[(family, cause, 1, t, "rct-only")] - vals[(family, cause, 0, t, mode)]
            )
        elif arm == 1:
            out[r] = vals[(family, cause, 1, t, "rct-only")]
        else:
            out[r] = vals[r]
    return out


def _influence(cohort, ns, family, arm, cause, t, mode):
    t = _validate(cohort, t, mode)
    target = Target(family, cause, arm)
    req = (family, cause, arm, t, mode)
    values = _influence_values(cohort, ns, [req])[req]
    return InfluenceVector(target=target, time=t, mode=mode, values=values)


def influence_theta(cohort, ns, arm, cause, t, mode="fusion"):
    """Per-record influence values for the cumulative incidence of one cause."""
    return _influence(cohort, ns, "theta", arm, cause, t, mode)


def influence_gamma(cohort, ns, arm, cause, t, mode="fusion"):
    """Per-record influence values for the time integral of the incidence
    (expected time lost to the cause by t)."""
    return _influence(cohort, ns, "gamma", arm, cause, t, mode)


def _report(cohort, ns, target, t, mode, values):
    n = values.size
    est = float(values.mean())
    centered = values - (cohort.pop == 1) / ns.alpha_hat * est
    se = float(np.sqrt(np.mean(centered**2) / n))
    return EstimateReport(
        target=target,
        time=t,
        mode=mode,
        estimate=est,
        std_error=se,
        ci_low=est - Z95 * se,
        ci_high=est + Z95 * se,
        n_used=n,
    )


def estimate(cohort, ns, target, t, mode="fusion"):
    """Point estimate with influence-based standard error and 95% interval."""
    t = _validate(cohort, t, mode)
    req = (target.family, target.cause, target.arm, t, mode)
    values = _influence_values(cohort, ns, [req])[req]
    return _report(cohort, ns, target, t, mode, values)


def estimate_all(cohort, ns, targets, times, modes=("fusion",)):
    """Estimate every (target, time, mode) combination in one engine pass."""
    combos = [
        (tg, _validate(cohort, t, m), m) for tg in targets for t in times for m in modes
    ]
    reqs = [(tg.family, tg.cause, tg.arm, t, m) for tg, t, m in combos]
    vals = _influence_values(cohort, ns, list(dict.fromkeys(reqs)))
    return [
        _report(cohort, ns, tg, t, m, vals[(tg.family, tg.cause, tg.arm, t, m)])
        for (tg, t, m) in combos
    ]


def variance_reduction(cohort, ns, t):
    """Plug-in estimate of the influence-variance drop from pooling external
    controls into the arm-0 cause-1 hazard, for the incidence at time t."""
    t = _validate(cohort, t, "fusion")
    req = ("theta", 1, t, "rct-only")
    vals, red = _arm_pass(cohort, ns, 0, [req], reduction_time=t)
    values = vals[req]
    est = float(values.mean())
    centered = values - (cohort.pop == 1) / ns.alpha_hat * est
    var_rct = float(np.mean(centered**2))
    reduction = float(red.mean())
    relative = reduction / var_rct if var_rct > 0.0 else 0.0
    return ReductionReport(
        time=t, reduction=reduction, rct_only_variance=var_rct, relative=relative
    )
