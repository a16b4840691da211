"""Command line runner.

Every subcommand writes ``<out>/<experiment>/summary.json`` and one or more
CSV files, and exits 0 when all checks pass, 1 when a check fails and 2 on a
configuration or precondition error. Settings come from ``--config`` (YAML or
JSON, keys spelled like the flags) with command line flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .acceptance import CRITERIA, PROFILES, run_all
from .geometry import CarlesonCube, UHPRect, carleson, parse_region
from .gmc import GmcParams
from .inequalities import counterexamples_csv, fuzz_power_inequalities, fuzz_summary_csv
from .moments import (
    DecompositionReport,
    cross_moment,
    decorrelation_check,
    deterministic_first_moment,
    divergence_scan,
    divergence_slope_theory,
    scaling_check,
    slice_moment_sequence,
    sokoban_check,
    tail_experiment,
)
from .sampler import NOISE_KINDS

SUMMARY_SCHEMA = 1
EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

_CSV_HELP = {
    "first-moment": "first_moment.csv: epsilon, expected_mass",
    "scaling": "scaling.csv: scale, epsilon, estimate, stderr, method (one row per side)",
    "scan": "scan.csv: scale (epsilon), p, estimate, stderr, log_estimate, method",
    "slices": "slices.csv: scale (slice top), n, estimate, stderr, method",
    "tail": "tail.csv: scale, k, alpha_hat, ci_low, ci_high (Hill profile)",
    "cross": "cross.csv: depends on --mode; moment gives k, q, estimate, stderr, method",
    "ineq": "fuzz_summary.csv: proposition, cases, violations, worst_relative_slack; "
            "counterexamples.csv: full inputs of any violation; comparisons.csv",
    "all": "criterion_NN_<table>.csv for every table of every criterion",
}


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class ExperimentConfig:
    experiment: str
    gamma: float = 1.0
    p: float = 0.8
    p_grid: list[float] = field(default_factory=lambda: [0.4, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75])
    region: str = "-1,1"
    region_b: str | None = None
    epsilon: float = 2.0**-5
    epsilon_list: list[float] = field(default_factory=lambda: [2.0**-k for k in range(3, 7)])
    samples: int = 2000
    seed: int = 0
    workers: int = 1
    out: str = "out"
    lambda_shift: float | None = None
    r: float = 0.5
    k: float = 0.4
    q: float = 0.4
    delta: list[float] = field(default_factory=lambda: [0.25, 0.125])
    mode: str = "moment"
    strips: int = 8
    n_max: int = 6
    hill_k: int | None = None
    noise: str = "gaussian"
    cases: int = 100_000
    profile: str = "full"
    criteria: list[int] | None = None

    def validate(self) -> None:
        """Range checks that must pass before any compute starts."""
        try:
            GmcParams(self.gamma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        positives = {"epsilon": self.epsilon, "samples": self.samples, "workers": self.workers,
                     "strips": self.strips, "cases": self.cases}
        for name, value in positives.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if any(not (math.isfinite(e) and e > 0) for e in self.epsilon_list):
            raise ConfigError(f"epsilon-list entries must be positive, got {self.epsilon_list}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0 < self.r < 1:
            raise ConfigError(f"r must lie in (0, 1), got {self.r}")
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"noise must be one of {NOISE_KINDS}, got {self.noise!r}")
        if self.mode not in ("moment", "decorrelation", "sokoban"):
            raise ConfigError(f"mode must be moment, decorrelation or sokoban, got {self.mode!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.criteria is not None and not set(self.criteria) <= set(CRITERIA):
            raise ConfigError(f"criteria must be drawn from {sorted(CRITERIA)}, got {self.criteria}")
        if self.lambda_shift is not None and not math.isfinite(self.lambda_shift):
            raise ConfigError(f"lambda-shift must be finite, got {self.lambda_shift}")
        try:
            self.region_rect()
            if self.region_b is not None:
                parse_region(self.region_b)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad region: {exc}") from None

    def region_rect(self) -> UHPRect:
        return parse_region(self.region)

    def cube(self) -> CarlesonCube:
        rect = self.region_rect()
        if rect.y0 != 0 or rect.height != rect.width:
            raise ConfigError(f"{self.experiment} needs a Carleson cube 'a,b', got {self.region!r}")
        return carleson(rect.x0, rect.x1)


_LIST_FIELDS = {"p_grid": float, "epsilon_list": float, "delta": float, "criteria": int}


def _parse_list(text, kind):
    if isinstance(text, (list, tuple)):
        return [kind(eval_number(v)) for v in text]
    return [kind(eval_number(v)) for v in str(text).split(",") if v.strip()]


def eval_number(text) -> float:
    """Numbers as floats, also accepting powers of two written ``2^-7``."""
    if isinstance(text, (int, float)):
        return text
    text = str(text).strip()
    if text.startswith("2^"):
        return 2.0 ** float(text[2:])
    return float(text)


def load_config_file(path: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping, got {type(data).__name__}")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def build_config(experiment: str, args: argparse.Namespace) -> ExperimentConfig:
    values = load_config_file(args.config) if args.config else {}
    known = set(ExperimentConfig.__dataclass_fields__) - {"experiment"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        for name, kind in _LIST_FIELDS.items():
            if values.get(name) is not None:
                values[name] = _parse_list(values[name], kind)
        for name in ("gamma", "p", "epsilon", "r", "k", "q", "lambda_shift"):
            if values.get(name) is not None:
                values[name] = float(eval_number(values[name]))
        for name in ("samples", "seed", "workers", "strips", "n_max", "hill_k", "cases"):
            if values.get(name) is not None:
                values[name] = int(values[name])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    config = ExperimentConfig(experiment, **values)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Experiments. Each returns (passed, checks, details, tables).

def _from_report(report: DecompositionReport, name: str):
    return report.passed, report.checks, report.to_json(), {name: report.to_csv()}


def run_first_moment(cfg: ExperimentConfig):
    region = cfg.region_rect()
    rows = ["epsilon,expected_mass\n"]
    values = []
    for e in cfg.epsilon_list:
        v = deterministic_first_moment(region, cfg.gamma, e)
        values.append(v)
        rows.append(f"{e!r},{v!r}\n")
    checks = {"finite_positive": all(math.isfinite(v) and v > 0 for v in values)}
    details = {"values": values}
    if len(values) >= 2:
        x = [math.log(1 / e) for e in cfg.epsilon_list]
        details["slope"] = (math.log(values[-1]) - math.log(values[0])) / (x[-1] - x[0])
    return all(checks.values()), checks, details, {"first_moment": "".join(rows)}


def run_scaling(cfg: ExperimentConfig):
    report = scaling_check(cfg.region_rect(), cfg.r, cfg.p, cfg.gamma, cfg.epsilon, cfg.samples, cfg.seed,
                           cfg.workers, cfg.lambda_shift, cfg.noise)
    return _from_report(report, "scaling")


def run_scan(cfg: ExperimentConfig):
    report = divergence_scan(cfg.cube(), cfg.p_grid, cfg.gamma, cfg.epsilon_list, cfg.samples, cfg.seed,
                             cfg.workers, cfg.lambda_shift)
    passed, checks, details, tables = _from_report(report, "scan")
    details["theory"] = {f"p={p:g}": divergence_slope_theory(p, cfg.gamma) for p in cfg.p_grid}
    return passed, checks, details, tables


def run_slices(cfg: ExperimentConfig):
    report = slice_moment_sequence(cfg.cube(), cfg.p, cfg.gamma, cfg.n_max, cfg.samples, None, cfg.seed,
                                   cfg.workers, cfg.lambda_shift, cfg.noise)
    return _from_report(report, "slices")


def run_tail(cfg: ExperimentConfig):
    report, _ = tail_experiment(cfg.cube(), cfg.gamma, cfg.epsilon, cfg.samples, cfg.seed, cfg.workers,
                                cfg.lambda_shift, cfg.hill_k)
    return _from_report(report, "tail")


def run_cross(cfg: ExperimentConfig):
    rect = cfg.region_rect()
    mid = 0.5 * (rect.x0 + rect.x1)
    left = UHPRect(rect.x0, mid, rect.y0, rect.y1)
    right = UHPRect(mid, rect.x1, rect.y0, rect.y1)
    if cfg.mode == "moment":
        other = parse_region(cfg.region_b) if cfg.region_b else right
        first = left if cfg.region_b is None else rect
        est = cross_moment(first, other, cfg.k, cfg.q, cfg.gamma, cfg.epsilon, cfg.samples, cfg.seed,
                           cfg.workers, cfg.lambda_shift, cfg.noise)
        table = ("k,q,estimate,stderr,method\n"
                 f"{cfg.k!r},{cfg.q!r},{est.mean!r},{est.stderr!r},{est.method}\n")
        checks = {"finite": math.isfinite(est.mean)}
        return all(checks.values()), checks, asdict(est), {"cross": table}
    if cfg.mode == "decorrelation":
        far = [UHPRect(mid + d * rect.width, rect.x1, rect.y0, rect.y1) for d in cfg.delta]
        deltas = [d * rect.width for d in cfg.delta]
        report = decorrelation_check(left, far, cfg.k, cfg.q, cfg.gamma, deltas, cfg.epsilon, cfg.samples,
                                     cfg.seed, cfg.workers, cfg.lambda_shift, cfg.noise)
        return _from_report(report, "decorrelation")
    report = sokoban_check(left, right, cfg.k, cfg.q, cfg.gamma, cfg.strips, cfg.epsilon, cfg.samples,
                           cfg.seed, cfg.workers, cfg.lambda_shift, cfg.noise)
    return _from_report(report, "sokoban")


def run_ineq(cfg: ExperimentConfig):
    outcomes = fuzz_power_inequalities(cfg.cases, cfg.seed)
    comparisons = CRITERIA[9]("full", cfg.seed, cfg.workers)
    checks = {o.proposition: o.passed for o in outcomes}
    checks.update(comparisons.details["checks"])
    details = {"fuzz": {o.proposition: {"cases": o.cases, "violations": o.violations,
                                       "worst_relative_slack": o.worst_relative_slack} for o in outcomes}}
    tables = {"fuzz_summary": fuzz_summary_csv(outcomes), "counterexamples": counterexamples_csv(outcomes),
              **comparisons.tables}
    return all(checks.values()), checks, details, tables


def run_acceptance(cfg: ExperimentConfig):
    tables = {}
    checks = {}
    details = {"profile": cfg.profile, "criteria": []}

    def report(outcome):
        print(outcome.line(), flush=True)

    for outcome in run_all(cfg.profile, cfg.seed, cfg.workers, cfg.criteria, report):
        checks[f"criterion_{outcome.number}"] = outcome.passed
        details["criteria"].append(outcome.to_json())
        for name, text in outcome.tables.items():
            tables[f"criterion_{outcome.number:02d}_{name}"] = text
    return all(checks.values()), checks, details, tables


EXPERIMENTS = {
    "first-moment": run_first_moment,
    "scaling": run_scaling,
    "scan": run_scan,
    "slices": run_slices,
    "tail": run_tail,
    "cross": run_cross,
    "ineq": run_ineq,
    "all": run_acceptance,
}


# ---------------------------------------------------------------------------

def describe_version() -> str:
    """``git describe`` of the source checkout when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    described = out.stdout.strip()
    return f"{__version__}+{described}" if out.returncode == 0 and described else __version__


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return _json_safe(value.item())
    return value


def write_outputs(cfg: ExperimentConfig, passed: bool, checks: dict, details: dict, tables: dict,
                  seconds: float) -> Path:
    folder = Path(cfg.out) / cfg.experiment
    folder.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        (folder / f"{name}.csv").write_text(text)
    summary = {
        "schema_version": SUMMARY_SCHEMA,
        "experiment": cfg.experiment,
        "version": describe_version(),
        "seed": cfg.seed,
        "config": asdict(cfg),
        "wall_time_seconds": seconds,
        "passed": passed,
        "checks": checks,
        "results": details,
    }
    (folder / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    return folder


def _add_common(parser: argparse.ArgumentParser) -> None:
    add = parser.add_argument
    add("--config", help="YAML or JSON file of settings; flags override it")
    add("--gamma", help="coupling constant in (0, 2)")
    add("--p", help="moment order")
    add("--p-grid", dest="p_grid", help="comma separated moment orders")
    add("--region", help="'a,b' for a Carleson cube or 'x0,x1,y0,y1'")
    add("--region-b", dest="region_b", help="second region for cross moments")
    add("--epsilon", help="regularization scale; '2^-7' is accepted")
    add("--epsilon-list", dest="epsilon_list", help="comma separated dyadic scales, coarse to fine")
    add("--samples", help="Monte Carlo replicates")
    add("--seed", help="unsigned 64-bit seed")
    add("--workers", help="threads; outputs do not depend on it")
    add("--out", help="output directory (default: out)")
    add("--lambda-shift", dest="lambda_shift", help="constant covariance shift; default searches for one")
    add("--noise", choices=NOISE_KINDS, help="'zero' replaces the field by 0 for deterministic runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmclab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "first-moment": "closed-form expected mass over a list of scales",
        "scaling": "Monte Carlo check of the exact scaling relation",
        "scan": "moment growth against 1/eps over a p grid",
        "slices": "moments of dyadic horizontal layers (diagnostic)",
        "tail": "Hill tail index of the mass of a Carleson cube",
        "cross": "cross moments, decorrelation bound, box-moving checks",
        "ineq": "fuzzed power inequalities and Gaussian comparison verifiers",
        "all": "the full acceptance suite",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=f"{text}. Output: {_CSV_HELP[name]}.")
        _add_common(p)
        if name == "scaling":
            p.add_argument("--r", help="scale factor in (0, 1)")
        if name == "slices":
            p.add_argument("--n-max", dest="n_max", help="deepest layer index")
        if name == "tail":
            p.add_argument("--hill-k", dest="hill_k", help="number of order statistics")
        if name == "cross":
            p.add_argument("--mode", choices=("moment", "decorrelation", "sokoban"))
            p.add_argument("--k", help="exponent on the first region")
            p.add_argument("--q", help="exponent on the second region")
            p.add_argument("--delta", help="comma separated gaps, as fractions of the region width")
            p.add_argument("--strips", help="number of vertical strips per half")
        if name == "ineq":
            p.add_argument("--cases", help="fuzz cases per inequality")
        if name == "all":
            p.add_argument("--profile", choices=PROFILES, help="full (published sizes) or smoke")
            p.add_argument("--criteria", help="comma separated subset of criteria to run")
    return parser


_NEGATIVE_VALUE = re.compile(r"^-(\d|\.\d)")


def _glue_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "-1,1" as an option; bind such values to the preceding flag.
    out: list[str] = []
    for token in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE_VALUE.match(token):
            out[-1] = f"{out[-1]}={token}"
        else:
            out.append(token)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_negative_values(argv))
    try:
        cfg = build_config(args.experiment, args)
    except ConfigError as exc:
        print(f"gmclab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        passed, checks, details, tables = EXPERIMENTS[cfg.experiment](cfg)
    except ValueError as exc:
        print(f"gmclab: precondition failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seconds = time.perf_counter() - start
    folder = write_outputs(cfg, passed, checks, details, tables, seconds)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"{'PASSED' if passed else 'FAILED'}: results in {folder}")
    return EXIT_OK if passed else EXIT_FAILED
