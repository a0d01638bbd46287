"""Command-line front end: ingest datasets, estimate, simulate, self-check.

Datasets are CSV files with header ``id,time,event,treat,pop,x1,...,xp``;
run settings travel in a JSON document (see :class:`RunConfig`). Exit codes
are 0 on success, 1 for usage or configuration errors, 2 for data errors,
and 3 for numerical failures (including failed self-checks and simulation
runs whose exclusion rate exceeds 5%).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import Cohort
from .errors import CifFusionError, DataError, NumericalError
from .estimators import Target, estimate_all, influence_gamma, influence_theta
from .nuisance import fit_nuisances
from .oracles import (
    check_aj_equivalence,
    check_eif_mean_zero,
    check_identities,
    check_reduction_consistency,
)
from .simulation import DEFAULT_TARGETS, DgpConfig, default_config, run_study

__all__ = [
    "ESTIMATES_HEADER",
    "INFLUENCE_HEADER",
    "RunConfig",
    "ingest",
    "load_run_config",
    "main",
    "write_dataset",
]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

ESTIMATES_HEADER = "estimand,time,type,estimate,ci_low,ci_high,reduction_pct"
INFLUENCE_HEADER = "id,estimand,time,type,value"

_MODE_SETS = {
    "fusion": ("fusion",),
    "rct-only": ("rct-only",),
    "both": ("fusion", "rct-only"),
}
_MISSING_CELLS = {"", "NA", "na", "NaN", "nan", "N/A"}
_BASE_COLUMNS = ("id", "time", "event", "treat", "pop")


class _UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# run configuration


def _parse_target(doc) -> Target:
    if not isinstance(doc, dict) or set(doc) != {"family", "cause", "arm"}:
        raise ValueError("each target must be an object with keys family, cause, arm")
    family = doc["family"]
    if family not in ("theta", "gamma"):
        raise ValueError("target family must be 'theta' or 'gamma'")
    cause = doc["cause"]
    if cause not in (1, 2):
        raise ValueError("target cause must be 1 or 2")
    arm = doc["arm"]
    if arm not in (0, 1, "effect"):
        raise ValueError("target arm must be 0, 1 or 'effect'")
    return Target(family, int(cause), arm)


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the estimate and simulate commands.

    ``times`` must all lie in (0, tau]. ``seed`` drives every random draw
    the command makes (currently only tie-breaking jitter at ingestion;
    simulation replicates are seeded from the dgp block's own seed).
    """

    tau: float
    times: tuple[float, ...]
    targets: tuple[Target, ...] = DEFAULT_TARGETS
    mode: str = "fusion"
    jitter_scale: float = 1e-5
    weight_cap_rule: str = "sqrt_n_log_n_over_5"
    seed: int = 1
    dgp: DgpConfig | None = None
    reps: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not np.isfinite(self.tau) or self.tau <= 0.0:
            raise ValueError("tau must be positive and finite")
        if not self.times:
            raise ValueError("times must be non-empty")
        for t in self.times:
            if not np.isfinite(t) or not 0.0 < t <= self.tau:
                raise ValueError("every time must lie in (0, tau]")
        if not self.targets:
            raise ValueError("targets must be non-empty")
        for tg in self.targets:
            if tg.family not in ("theta", "gamma"):
                raise ValueError("target family must be 'theta' or 'gamma'")
        if self.mode not in _MODE_SETS:
            raise ValueError(f"mode must be one of {sorted(_MODE_SETS)}")
        if not np.isfinite(self.jitter_scale) or self.jitter_scale <= 0.0:
            raise ValueError("jitter_scale must be positive")
        if self.reps is not None and int(self.reps) < 1:
            raise ValueError("reps must be at least 1")

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValueError("run config must be a JSON object")
        known = {
            "tau",
            "times",
            "targets",
            "mode",
            "jitter_scale",
            "weight_cap_rule",
            "seed",
            "dgp",
            "reps",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        missing = {"tau", "times"} - set(doc)
        if missing:
            raise ValueError(f"run config is missing required keys: {sorted(missing)}")
        kwargs: dict = {"tau": doc["tau"], "times": doc["times"]}
        if "targets" in doc:
            kwargs["targets"] = tuple(_parse_target(t) for t in doc["targets"])
        for key in ("mode", "jitter_scale", "weight_cap_rule"):
            if key in doc:
                kwargs[key] = doc[key]
        if "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        if "dgp" in doc:
            kwargs["dgp"] = DgpConfig.from_json(doc["dgp"])
        if "reps" in doc:
            kwargs["reps"] = int(doc["reps"])
        return cls(**kwargs)


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# dataset ingestion


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"line {line}: malformed {column} value {cell!r}") from None


def ingest(path, config: RunConfig) -> Cohort:
    """Read a dataset file, applying the preprocessing rules.

    Rows with a missing covariate are dropped (count logged). Exactly tied
    event times across the two causes are broken by adding uniform noise on
    (0, jitter_scale) from the seeded generator, repeated until no
    cross-cause tie remains; the number of jittered rows is logged.
    """
    ids: list[str] = []
    times: list[float] = []
    causes: list[int] = []
    treat: list[float] = []
    pop: list[int] = []
    covs: list[list[float]] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("dataset file is empty")
        p = len(header) - len(_BASE_COLUMNS)
        expected = list(_BASE_COLUMNS) + [f"x{j + 1}" for j in range(p)]
        if p < 1 or header != expected:
            raise DataError(
                "dataset header must be id,time,event,treat,pop,x1,...,xp; got "
                + ",".join(header)
            )
        for row in reader:
            line = reader.line_num
            if len(row) != len(expected):
                raise DataError(f"line {line}: expected {len(expected)} fields, got {len(row)}")
            rid = row[0]
            if not rid:
                raise DataError(f"line {line}: empty id")
            time = _parse_float(row[1], line, "time")
            if row[2] not in ("0", "1", "2"):
                raise DataError(f"line {line}: event must be 0, 1 or 2; got {row[2]!r}")
            event = int(row[2])
            if row[4] not in ("0", "1"):
                raise DataError(f"line {line}: pop must be 0 or 1; got {row[4]!r}")
            group = int(row[4])
            if row[3] in _MISSING_CELLS:
                if group != 0:
                    raise DataError(f"line {line}: treat is missing but pop is 1")
                arm = float("nan")
            else:
                arm = _parse_float(row[3], line, "treat")
                if arm not in (0.0, 1.0):
                    raise DataError(f"line {line}: treat must be 0, 1 or NA; got {row[3]!r}")
                if group == 0:
                    raise DataError(f"line {line}: treat must be NA when pop is 0")
            if any(cell in _MISSING_CELLS for cell in row[5:]):
                dropped += 1
                continue
            x = [_parse_float(cell, line, name) for cell, name in zip(row[5:], expected[5:])]
            ids.append(rid)
            times.append(time)
            causes.append(event)
            treat.append(arm)
            pop.append(group)
            covs.append(x)
    if dropped:
        logger.info("dropped %d rows with missing covariates", dropped)
    if not ids:
        raise DataError("dataset has no usable rows")
    if not any(g == 1 for g in pop):
        raise DataError("dataset has no trial rows (pop=1)")
    time_arr = np.asarray(times, dtype=np.float64)
    cause_arr = np.asarray(causes, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    jittered: set[int] = set()
    for _ in range(1000):
        shared = np.intersect1d(time_arr[cause_arr == 1], time_arr[cause_arr == 2])
        if shared.size == 0:
            break
        hit = np.isin(time_arr, shared) & (cause_arr > 0)
        for i in np.flatnonzero(hit):
            time_arr[i] += rng.uniform(0.0, config.jitter_scale)
            jittered.add(int(i))
    else:  # pragma: no cover - would need adversarial float collisions
        raise NumericalError("could not break cross-cause ties by jittering")
    if jittered:
        logger.info("jittered %d rows to break cross-cause event-time ties", len(jittered))
    return Cohort.from_arrays(
        ids=np.asarray(ids, dtype=object),
        times=time_arr,
        causes=cause_arr,
        treat=np.asarray(treat, dtype=np.float64),
        pop=np.asarray(pop, dtype=np.int64),
        X=np.asarray(covs, dtype=np.float64),
        tau=config.tau,
    )


def write_dataset(cohort: Cohort, path) -> None:
    """Write a cohort in the ingestion format, floats at 17 significant digits."""
    p = cohort.X.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_BASE_COLUMNS) + [f"x{j + 1}" for j in range(p)])
        for i in range(cohort.n):
            arm = "NA" if np.isnan(cohort.treat[i]) else str(int(cohort.treat[i]))
            writer.writerow(
                [
                    cohort.ids[i],
                    _fmt(cohort.times[i]),
                    str(int(cohort.causes[i])),
                    arm,
                    str(int(cohort.pop[i])),
                ]
                + [_fmt(v) for v in cohort.X[i]]
            )


# ---------------------------------------------------------------------------
# commands


def _cmd_estimate(args) -> int:
    config = load_run_config(args.config)
    cohort = ingest(args.dataset, config)
    ns = fit_nuisances(cohort, weight_cap_rule=config.weight_cap_rule)
    requested = _MODE_SETS[config.mode]
    # the fusion rows report the CI-length drop against the trial-only fit,
    # so that counterpart is always computed alongside
    computed = _MODE_SETS["both"] if "fusion" in requested else requested
    reports = {
        (rep.target, rep.time, rep.mode): rep
        for rep in estimate_all(cohort, ns, config.targets, config.times, modes=computed)
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [ESTIMATES_HEADER]
    for tg in config.targets:
        for t in config.times:
            for mode in requested:
                rep = reports[(tg, t, mode)]
                if mode == "fusion":
                    ref = reports[(tg, t, "rct-only")]
                    len_f = rep.ci_high - rep.ci_low
                    len_r = ref.ci_high - ref.ci_low
                    reduction = _fmt(100.0 * (1.0 - len_f / len_r)) if len_r > 0.0 else _fmt(0.0)
                    mark = "+"
                else:
                    reduction = ""
                    mark = "-"
                lines.append(
                    ",".join(
                        [
                            tg.label(),
                            _fmt(t),
                            mark,
                            _fmt(rep.estimate),
                            _fmt(rep.ci_low),
                            _fmt(rep.ci_high),
                            reduction,
                        ]
                    )
                )
    est_path = out_dir / "estimates.csv"
    est_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {est_path} ({len(lines) - 1} rows)")
    if args.emit_influence:
        inf_lines = [INFLUENCE_HEADER]
        for tg in config.targets:
            influence = influence_theta if tg.family == "theta" else influence_gamma
            for t in config.times:
                for mode in requested:
                    vec = influence(cohort, ns, tg.arm, tg.cause, t, mode=mode)
                    mark = "+" if mode == "fusion" else "-"
                    for rid, value in zip(cohort.ids, vec.values):
                        inf_lines.append(
                            ",".join([str(rid), tg.label(), _fmt(t), mark, _fmt(value)])
                        )
        inf_path = out_dir / "influence.csv"
        inf_path.write_text("\n".join(inf_lines) + "\n", encoding="utf-8")
        print(f"wrote {inf_path} ({len(inf_lines) - 1} rows)")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = load_run_config(args.config)
    if config.dgp is None or config.reps is None:
        raise ValueError("simulate requires a run config with 'dgp' and 'reps'")
    summary = run_study(
        config.dgp,
        config.reps,
        targets=config.targets,
        times=config.times,
        tau=config.tau,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "summary.csv"
    out_path.write_text(summary.to_csv(), encoding="utf-8")
    total = summary.replicates + summary.excluded
    print(f"wrote {out_path} ({summary.replicates} kept, {summary.excluded} excluded)")
    if summary.excluded > 0.05 * total:
        print(
            f"error: {summary.excluded}/{total} replicates excluded (above the 5% budget)",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL
    return EXIT_OK


def _check_table(reports, expect_fail: bool) -> tuple[str, bool]:
    lines = []
    ok = True
    for rep in reports:
        as_expected = rep.passed != expect_fail
        ok &= as_expected
        status = "PASS" if rep.passed else "FAIL"
        if expect_fail:
            status += " (expected)" if as_expected else " (unexpected)"
        lines.append(
            f"{rep.name:<34} {status:<18} statistic {rep.statistic:.4g} "
            f"(threshold {rep.threshold:g}) {rep.detail}"
        )
    return "\n".join(lines), ok


def _cmd_check(args) -> int:
    seed = args.seed
    cfg = default_config(n=5000, seed=seed)
    corrupt = bool(args.negative_controls)
    reports = [
        check_identities(500, np.random.default_rng([seed, 1]), corrupt=corrupt),
        check_aj_equivalence(12, 200, np.random.default_rng([seed, 2]), corrupt=corrupt),
    ]
    if args.level == "full":
        if corrupt:
            reports.append(check_eif_mean_zero(cfg, 5000, 20, corrupt="hazard"))
        else:
            reports.append(check_eif_mean_zero(cfg, 5000, 20))
            reports.append(check_reduction_consistency(cfg, 5000))
    table, ok = _check_table(reports, expect_fail=corrupt)
    print(table)
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# argument parsing and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage failures at exit code 1
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="cif-fusion",
        description="Cumulative-incidence estimation fusing a trial with external controls.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate targets from a dataset file")
    est.add_argument("dataset", help="CSV dataset (id,time,event,treat,pop,x1,...,xp)")
    est.add_argument("--config", required=True, help="JSON run config")
    est.add_argument("--out", default=".", help="output directory (default: current)")
    est.add_argument(
        "--emit-influence",
        action="store_true",
        help="also write per-record influence values to influence.csv",
    )
    est.set_defaults(func=_cmd_estimate)

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("--config", required=True, help="JSON run config with dgp block and reps")
    sim.add_argument("--out", default=".", help="output directory (default: current)")
    sim.set_defaults(func=_cmd_simulate)

    chk = sub.add_parser("check", help="run the self-check oracles")
    chk.add_argument("level", choices=("quick", "full"))
    chk.add_argument("--seed", type=int, default=1)
    chk.add_argument(
        "--negative-controls",
        action="store_true",
        help="run deliberately corrupted checks; exit 0 when they fail as expected",
    )
    chk.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CifFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
