"""Synthetic two-population studies with known truth.

The generator draws covariates on (-1, 1)^p via a Gaussian copula, selects
trial membership with a logistic score, randomizes treatment inside the
trial, and produces event and censoring times from multiplicative-hazard
models that share one Weibull time shape. Sharing the shape across both
event causes gives a closed-form inverse for the all-cause draw and a
time-constant cause split, and it makes the conditional incidence
functions available in closed form, so study-level bias and coverage can
be measured against exact truths rather than a second simulation.

`run_study` repeats generate/fit/estimate over seeded replicates (child
seed = base seed + replicate index, so parallel and serial runs agree) and
aggregates the summary statistics reported by `SimulationSummary`.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit, gamma as gamma_fn, gammainc, ndtr

from .cohort import Cohort
from .errors import CifFusionError, DataError, NumericalError
from .estimators import MODES, Z95, Target, estimate_all
from .nuisance import fit_nuisances

__all__ = [
    "HazardCoef",
    "DgpConfig",
    "default_config",
    "SummaryRow",
    "SimulationSummary",
    "SUMMARY_HEADER",
    "DEFAULT_TARGETS",
    "DEFAULT_TIMES",
    "sample_covariates",
    "selection_score",
    "sample_selection_treatment",
    "sample_event",
    "sample_censoring",
    "generate_cohort",
    "true_values",
    "run_study",
    "resolve_workers",
]

DEFAULT_TIMES = (0.25, 1.0, 2.0)


@dataclass(frozen=True)
class HazardCoef:
    """Linear predictor of one multiplicative hazard.

    lp(x, a) = intercept + treat*a + x.X + (1-a)*(x_ctrl.X); the rate
    multiplier is exp(lp). `x_ctrl` carries loadings that act only off
    treatment (the censoring model uses one). An intercept of -inf turns
    the hazard off entirely; all other entries must be finite. Records
    without an arm indicator evaluate the arm terms at a = 0, which is
    exact for external-population records because their coefficient
    records carry no arm loadings.
    """

    intercept: float = 0.0
    treat: float = 0.0
    x: tuple[float, ...] = (0.0, 0.0, 0.0)
    x_ctrl: tuple[float, ...] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "x_ctrl", tuple(float(v) for v in self.x_ctrl))
        if len(self.x) != len(self.x_ctrl):
            raise ValueError("x and x_ctrl must have equal length")
        ok = np.isfinite(self.intercept) or self.intercept == -np.inf
        if not ok:
            raise ValueError("intercept must be finite or -inf")
        rest = (self.treat, *self.x, *self.x_ctrl)
        if not np.all(np.isfinite(rest)):
            raise ValueError("loadings other than the intercept must be finite")

    def lp(self, X: np.ndarray, a: np.ndarray | float) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.intercept == -np.inf:
            return np.full(X.shape[0], -np.inf)
        a = np.nan_to_num(np.asarray(a, dtype=np.float64), nan=0.0)
        out = self.intercept + self.treat * a + X @ np.asarray(self.x)
        return out + (1.0 - a) * (X @ np.asarray(self.x_ctrl))

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "treat": self.treat,
            "x": list(self.x),
            "x_ctrl": list(self.x_ctrl),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "HazardCoef":
        unknown = set(doc) - {"intercept", "treat", "x", "x_ctrl"}
        if unknown:
            raise ValueError(f"unknown hazard coefficient keys: {sorted(unknown)}")
        base = cls()
        return cls(
            intercept=float(doc.get("intercept", base.intercept)),
            treat=float(doc.get("treat", base.treat)),
            x=tuple(doc.get("x", base.x)),
            x_ctrl=tuple(doc.get("x_ctrl", base.x_ctrl)),
        )


def _default_sigma() -> tuple:
    return ((1.0, 0.25, 0.25), (0.25, 1.0, 0.25), (0.25, 0.25, 1.0))


@dataclass(frozen=True)
class DgpConfig:
    """Full description of the synthetic study.

    `beta11`/`beta12` are the trial-population cause-1/cause-2 hazards
    (treatment loading active), `beta01`/`beta02` their external-population
    counterparts. At a = 0 the default `beta11` and `beta01` agree, which is
    the transportability structure the fusion estimator relies on; edit one
    of them to break it deliberately. Weibull pairs are (shape, scale) of
    the baseline cumulative hazard scale*t^shape.
    """

    n: int = 1500
    sigma: tuple = field(default_factory=_default_sigma)
    sel_coef: tuple[float, ...] = (-0.2, 0.4, 0.2, 0.3)
    trt_prob: float = 0.5
    beta11: HazardCoef = HazardCoef(0.0, 0.5, (0.2, 0.0, 0.7))
    beta12: HazardCoef = HazardCoef(1.0, 0.05, (0.8, 0.5, 0.0))
    beta01: HazardCoef = HazardCoef(0.0, 0.0, (0.2, 0.0, 0.7))
    beta02: HazardCoef = HazardCoef(0.0, 0.0, (0.5, 0.8, -0.3))
    weibull_event: tuple[float, float] = (0.7, 0.2)
    weibull_cens: tuple[float, float] = (0.7, 0.24)
    cens_coef_rct: HazardCoef = HazardCoef(0.5, 0.0, (0.0, 0.0, -0.05), (0.05, 0.0, 0.0))
    cens_coef_ext: HazardCoef = HazardCoef(0.0, 0.0, (0.0, 0.05, 0.0))
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(tuple(float(v) for v in r) for r in self.sigma))
        object.__setattr__(self, "sel_coef", tuple(float(v) for v in self.sel_coef))
        object.__setattr__(self, "weibull_event", tuple(float(v) for v in self.weibull_event))
        object.__setattr__(self, "weibull_cens", tuple(float(v) for v in self.weibull_cens))
        if self.n < 1:
            raise ValueError("n must be at least 1")
        p = len(self.sigma)
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.shape != (p, p) or not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("sigma must be a square symmetric matrix")
        if not np.allclose(np.diag(s), 1.0, atol=1e-12):
            raise ValueError("sigma must have unit diagonal")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise ValueError("sigma must be positive-definite") from None
        if len(self.sel_coef) != p + 1:
            raise ValueError("sel_coef must hold an intercept plus one loading per covariate")
        if not 0.0 <= self.trt_prob <= 1.0:
            raise ValueError("trt_prob must lie in [0, 1]")
        for name in ("weibull_event", "weibull_cens"):
            shape, scale = getattr(self, name)
            if not (np.isfinite(shape) and np.isfinite(scale) and shape > 0 and scale > 0):
                raise ValueError(f"{name} needs positive finite (shape, scale)")
        for name in ("beta11", "beta12", "beta01", "beta02", "cens_coef_rct", "cens_coef_ext"):
            if len(getattr(self, name).x) != p:
                raise ValueError(f"{name} loadings must match the covariate dimension")

    @property
    def p(self) -> int:
        return len(self.sigma)

    def to_json(self) -> dict:
        doc = {
            "n": self.n,
            "sigma": [list(r) for r in self.sigma],
            "sel_coef": list(self.sel_coef),
            "trt_prob": self.trt_prob,
            "weibull_event": list(self.weibull_event),
            "weibull_cens": list(self.weibull_cens),
            "seed": self.seed,
        }
        for name in ("beta11", "beta12", "beta01", "beta02", "cens_coef_rct", "cens_coef_ext"):
            doc[name] = getattr(self, name).to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DgpConfig":
        """Build a config from a JSON document; omitted keys keep defaults."""
        fields = {
            "n", "sigma", "sel_coef", "trt_prob", "beta11", "beta12", "beta01",
            "beta02", "weibull_event", "weibull_cens", "cens_coef_rct",
            "cens_coef_ext", "seed",
        }
        unknown = set(doc) - fields
        if unknown:
            raise ValueError(f"unknown data-generator keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in ("n", "seed"):
                kwargs[key] = int(value)
            elif key == "trt_prob":
                kwargs[key] = float(value)
            elif key == "sigma":
                kwargs[key] = tuple(tuple(r) for r in value)
            elif key in ("sel_coef", "weibull_event", "weibull_cens"):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = HazardCoef.from_json(value)
        return cls(**kwargs)


def default_config(n: int = 1500, seed: int = 1) -> DgpConfig:
    """The study design used throughout the test suite."""
    return DgpConfig(n=n, seed=seed)


DEFAULT_TARGETS = tuple(
    Target(family, 1, arm) for family in ("theta", "gamma") for arm in (0, 1, "effect")
)


def sample_covariates(rng, n: int, sigma) -> np.ndarray:
    """Draw n rows of X = 2*Phi(Z) - 1 with Z centered normal, cov sigma.

    Marginals are uniform(-1, 1); dependence comes through the normal copula.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or not np.allclose(s, s.T, atol=1e-12):
        raise ValueError("sigma must be a square symmetric matrix")
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise ValueError("sigma must be positive-definite") from None
    z = rng.standard_normal((n, s.shape[0])) @ chol.T
    return 2.0 * ndtr(z) - 1.0


def _expit_score(X: np.ndarray, coef) -> np.ndarray:
    c = np.asarray(coef, dtype=np.float64)
    return expit(c[0] + np.asarray(X, dtype=np.float64) @ c[1:])


def selection_score(X: np.ndarray, config: DgpConfig) -> np.ndarray:
    """True probability of trial membership given covariates."""
    return _expit_score(X, config.sel_coef)


def sample_selection_treatment(rng, X: np.ndarray, config: DgpConfig):
    """Trial membership D and treatment A; A is NaN off trial."""
    n = X.shape[0]
    d = (rng.random(n) < selection_score(X, config)).astype(np.int64)
    a = np.where((rng.random(n) < config.trt_prob) & (d == 1), 1.0, 0.0)
    return d, np.where(d == 1, a, np.nan)


def _event_rates(config: DgpConfig, X, a, trial: bool):
    b1, b2 = (config.beta11, config.beta12) if trial else (config.beta01, config.beta02)
    return np.exp(b1.lp(X, a)), np.exp(b2.lp(X, a))


def sample_event(rng, X, D, A, config: DgpConfig):
    """Latent event time and cause for every record.

    With both causes sharing the baseline scale*t^shape, the all-cause
    cumulative hazard inverts in closed form and the cause split is a
    time-constant Bernoulli with probability rate1/(rate1+rate2). One
    exponential draw and one uniform draw per record, in that order.
    """
    shape, scale = config.weibull_event
    r1t, r2t = _event_rates(config, X, A, trial=True)
    r1e, r2e = _event_rates(config, X, A, trial=False)
    trial = np.asarray(D) == 1
    r1 = np.where(trial, r1t, r1e)
    r2 = np.where(trial, r2t, r2e)
    total = r1 + r2
    e = rng.exponential(1.0, X.shape[0])
    denom = np.where(total > 0, scale * total, 1.0)
    t = np.where(total > 0, (e / denom) ** (1.0 / shape), np.inf)
    p1 = np.divide(r1, total, out=np.full_like(total, 0.5), where=total > 0)
    j = np.where(rng.random(X.shape[0]) < p1, 1, 2)
    return t, j


def sample_censoring(rng, X, D, A, config: DgpConfig):
    """Latent censoring time per record (inf when the hazard is off)."""
    shape, scale = config.weibull_cens
    lp_t = config.cens_coef_rct.lp(X, A)
    lp_e = config.cens_coef_ext.lp(X, A)
    rate = np.exp(np.where(np.asarray(D) == 1, lp_t, lp_e))
    e = rng.exponential(1.0, X.shape[0])
    denom = np.where(rate > 0, scale * rate, 1.0)
    return np.where(rate > 0, (e / denom) ** (1.0 / shape), np.inf)


def generate_cohort(config: DgpConfig, *, tau: float, seed: int | None = None) -> Cohort:
    """One full observed dataset: draws flow covariates -> selection ->
    treatment -> event -> cause -> censoring from a single generator."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    X = sample_covariates(rng, config.n, config.sigma)
    d, a = sample_selection_treatment(rng, X, config)
    t, j = sample_event(rng, X, d, a, config)
    c = sample_censoring(rng, X, d, a, config)
    obs = np.minimum(t, c)
    if not np.all(np.isfinite(obs)):
        raise DataError("observed times are not all finite; event and censoring hazards are both off somewhere")
    causes = np.where(t <= c, j, 0)
    ids = np.array([str(i) for i in range(config.n)], dtype=object)
    return Cohort.from_arrays(ids=ids, times=obs, causes=causes, treat=a, pop=d, X=X, tau=tau)


def _exp_weibull_integral(k: np.ndarray, t: float, shape: float) -> np.ndarray:
    # int_0^t exp(-k s^shape) ds via the lower incomplete gamma function,
    # elementwise in the rate k (k = 0 gives t).
    inv = 1.0 / shape
    out = np.full(k.shape, float(t))
    pos = k > 0
    kp = k[pos]
    out[pos] = gamma_fn(inv) * inv * kp ** -inv * gammainc(inv, kp * t**shape)
    return out


def _truth_needed(targets) -> tuple:
    arms = set()
    for tg in targets:
        arms.update((0, 1) if tg.arm == "effect" else (tg.arm,))
    return tuple(sorted(arms))


@lru_cache(maxsize=8)
def _truth_surface(event_key, sel_coef, sigma, seed, times, draws, batch):
    """Weighted Monte Carlo of the closed-form conditional incidences.

    Covariates are drawn from their marginal law and reweighted by the
    selection score, which targets the trial-population covariate law
    without rejection sampling. Returns {(family, cause, arm, t): value}
    for both causes, both arms, theta/gamma/surv.
    """
    beta11, beta12, (shape, scale) = event_key
    rng = np.random.default_rng([seed, 901])
    acc = {}
    wsum = 0.0
    left = draws
    while left > 0:
        m = min(batch, left)
        left -= m
        X = sample_covariates(rng, m, sigma)
        w = _expit_score(X, sel_coef)
        wsum += w.sum()
        for arm in (0, 1):
            r1 = np.exp(beta11.lp(X, float(arm)))
            r2 = np.exp(beta12.lp(X, float(arm)))
            total = r1 + r2
            p1 = np.divide(r1, total, out=np.full_like(total, 0.5), where=total > 0)
            k = scale * total
            for t in times:
                surv = np.exp(-k * float(t) ** shape)
                f_all = 1.0 - surv
                g_all = float(t) - _exp_weibull_integral(k, float(t), shape)
                for cause, share in ((1, p1), (2, 1.0 - p1)):
                    acc[("theta", cause, arm, t)] = acc.get(("theta", cause, arm, t), 0.0) + float(w @ (share * f_all))
                    acc[("gamma", cause, arm, t)] = acc.get(("gamma", cause, arm, t), 0.0) + float(w @ (share * g_all))
                acc[("surv", 0, arm, t)] = acc.get(("surv", 0, arm, t), 0.0) + float(w @ surv)
    return {key: val / wsum for key, val in acc.items()}


def true_values(config: DgpConfig, targets, times, *, draws: int = 10_000_000) -> dict:
    """Exact-law target values, keyed by (target, time).

    Only the event-time model and the selection score enter; censoring and
    the randomization ratio do not. Results are cached per configuration.
    """
    targets = tuple(targets)
    times = tuple(float(t) for t in times)
    event_key = (config.beta11, config.beta12, config.weibull_event)
    surface = _truth_surface(
        event_key, config.sel_coef, config.sigma, config.seed, times, draws, 1_000_000
    )
    out = {}
    for tg in targets:
        for t in times:
            if tg.arm == "effect":
                value = surface[(tg.family, tg.cause, 1, t)] - surface[(tg.family, tg.cause, 0, t)]
            else:
                value = surface[(tg.family, tg.cause, tg.arm, t)]
            out[(tg, t)] = value
    return out


SUMMARY_HEADER = "estimand,time,type,mean,bias_1e4,rmse_1e2,se_1e2,coverage_pct,reduction_pct"


@dataclass(frozen=True)
class SummaryRow:
    """One aggregated line of a study: '+' rows pool the external controls,
    '-' rows use the trial alone. Bias is reported in 1e-4 units, RMSE and
    mean standard error in 1e-2 units, coverage and reduction in percent;
    reduction (mean percentage drop in squared standard error) is only
    defined on '+' rows."""

    estimand: str
    time: float
    type: str
    mean: float
    bias_1e4: float
    rmse_1e2: float
    se_1e2: float
    coverage_pct: float
    reduction_pct: float | None

    def __post_init__(self):
        if self.type not in ("+", "-"):
            raise ValueError("type must be '+' or '-'")
        if not 0.0 <= self.coverage_pct <= 100.0:
            raise ValueError("coverage_pct must lie in [0, 100]")
        slack = 1e-9 * (1.0 + abs(self.bias_1e4))
        if self.rmse_1e2 * 1e-2 + slack < abs(self.bias_1e4) * 1e-4:
            raise ValueError("rmse cannot be smaller than |bias|")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SimulationSummary:
    """Aggregated study results. `replicates` counts the replicates that
    entered the aggregation; `excluded` counts those dropped because
    nuisance fitting or estimation failed."""

    rows: tuple
    replicates: int
    excluded: int = 0

    def to_csv(self) -> str:
        lines = [SUMMARY_HEADER]
        for r in self.rows:
            red = "" if r.reduction_pct is None else _fmt(r.reduction_pct)
            lines.append(
                f"{r.estimand},{_fmt(r.time)},{r.type},{_fmt(r.mean)},{_fmt(r.bias_1e4)},"
                f"{_fmt(r.rmse_1e2)},{_fmt(r.se_1e2)},{_fmt(r.coverage_pct)},{red}"
            )
        lines.append(f"# replicates={self.replicates} excluded={self.excluded}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SimulationSummary":
        lines = [ln for ln in text.strip().split("\n") if ln]
        if not lines or lines[0] != SUMMARY_HEADER:
            raise DataError("summary CSV must start with the standard header")
        meta = lines[-1]
        if not meta.startswith("# replicates="):
            raise DataError("summary CSV must end with the replicates line")
        body, tail = meta[2:].split(" excluded=")
        replicates = int(body.split("=")[1])
        rows = []
        for ln in lines[1:-1]:
            parts = ln.split(",")
            if len(parts) != 9:
                raise DataError(f"summary row has {len(parts)} fields, expected 9")
            rows.append(
                SummaryRow(
                    estimand=parts[0],
                    time=float(parts[1]),
                    type=parts[2],
                    mean=float(parts[3]),
                    bias_1e4=float(parts[4]),
                    rmse_1e2=float(parts[5]),
                    se_1e2=float(parts[6]),
                    coverage_pct=float(parts[7]),
                    reduction_pct=None if parts[8] == "" else float(parts[8]),
                )
            )
        return cls(rows=tuple(rows), replicates=replicates, excluded=int(tail))


def resolve_workers(max_workers: int | None = None) -> int:
    """Worker count: explicit argument, else CIF_FUSION_THREADS, else one
    per CPU; 0 means auto."""
    if max_workers is None:
        raw = os.environ.get("CIF_FUSION_THREADS", "").strip()
        try:
            max_workers = int(raw) if raw else 0
        except ValueError:
            raise ValueError(f"CIF_FUSION_THREADS must be an integer, got {raw!r}") from None
    if max_workers < 0:
        raise ValueError("worker count cannot be negative")
    return max_workers if max_workers else (os.cpu_count() or 1)


def _replicate(config: DgpConfig, index: int, tau: float, targets, times):
    try:
        cohort = generate_cohort(config, tau=tau, seed=config.seed + index)
        ns = fit_nuisances(cohort)
        reports = estimate_all(cohort, ns, targets, times, modes=MODES)
    except CifFusionError as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"
    est = np.array([r.estimate for r in reports])
    se = np.array([r.std_error for r in reports])
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(se))):
        return index, None, None, "NumericalError: non-finite estimate or standard error"
    return index, est, se, None


def _aggregate_row(label, t, mark, est, se, truth, reduction):
    err = est - truth
    covered = np.abs(err) <= Z95 * se
    return SummaryRow(
        estimand=label,
        time=t,
        type=mark,
        mean=float(est.mean()),
        bias_1e4=float(err.mean()) / 1e-4,
        rmse_1e2=float(np.sqrt(np.mean(err**2))) / 1e-2,
        se_1e2=float(se.mean()) / 1e-2,
        coverage_pct=100.0 * float(covered.mean()),
        reduction_pct=reduction,
    )


def run_study(
    config: DgpConfig,
    reps: int,
    targets=DEFAULT_TARGETS,
    times=DEFAULT_TIMES,
    *,
    tau: float | None = None,
    max_workers: int | None = None,
    truth_draws: int = 10_000_000,
) -> SimulationSummary:
    """Generate, fit and estimate `reps` independent studies and aggregate.

    Replicate i uses seed config.seed + i; failed replicates are excluded
    and counted. Results are reduced in replicate-index order, so the
    worker count never changes the output. `truth_draws` sizes the Monte
    Carlo behind the exact-law values used for bias and coverage.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    targets = tuple(targets)
    times = tuple(float(t) for t in times)
    if not targets or not times:
        raise ValueError("need at least one target and one time point")
    if tau is None:
        tau = max(times)
    if max(times) > tau:
        raise ValueError("every time point must satisfy t <= tau")
    truths = true_values(config, targets, times, draws=truth_draws)

    workers = min(resolve_workers(max_workers), reps)
    if workers <= 1:
        results = [_replicate(config, i, tau, targets, times) for i in range(reps)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_replicate, config, i, tau, targets, times) for i in range(reps)
            ]
            results = [f.result() for f in futures]

    failures = [(i, msg) for i, _, _, msg in results if msg is not None]
    kept = [(e, s) for _, e, s, msg in results if msg is None]
    if not kept:
        raise NumericalError(
            f"all {reps} replicates failed; first failure: {failures[0][1]}"
        )
    est = np.stack([e for e, _ in kept])
    se = np.stack([s for _, s in kept])

    combo_index = {
        (tg, t, mode): i
        for i, (tg, t, mode) in enumerate(
            (tg, t, mode) for tg in targets for t in times for mode in MODES
        )
    }
    rows = []
    for tg in targets:
        for t in times:
            truth = truths[(tg, t)]
            ip = combo_index[(tg, t, "fusion")]
            im = combo_index[(tg, t, "rct-only")]
            with np.errstate(divide="ignore", invalid="ignore"):
                per_rep = np.where(
                    se[:, im] > 0, 100.0 * (1.0 - (se[:, ip] / se[:, im]) ** 2), 0.0
                )
            rows.append(
                _aggregate_row(tg.label(), t, "+", est[:, ip], se[:, ip], truth, float(per_rep.mean()))
            )
            rows.append(_aggregate_row(tg.label(), t, "-", est[:, im], se[:, im], truth, None))
    return SimulationSummary(rows=tuple(rows), replicates=len(kept), excluded=len(failures))
