"""The acceptance suite: one function per criterion, each returning a
``CriterionOutcome`` with its pass flag, headline numbers and CSV tables.

Two parameter profiles exist. ``full`` uses the published sample sizes and
takes tens of minutes on one core; ``smoke`` shrinks grids and sample counts
so the whole suite runs in well under a minute. Smoke outcomes are not
expected to pass the statistical criteria.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import UHPRect, carleson, horizontal_slices
from .inequalities import (
    ExpLinear,
    GaussianVectorSpec,
    Power,
    RenormalizedPowerProduct,
    counterexamples_csv,
    functional_expectation,
    fuzz_power_inequalities,
    fuzz_summary_csv,
    kahane_expectation,
    kahane_monotonicity_check,
    kahane_shift_constant,
    random_covariance,
    slepian_verify,
)
from .moments import (
    DecompositionReport,
    decorrelation_check,
    deterministic_first_moment,
    divergence_scan,
    scaling_check,
    sokoban_check,
    tail_experiment,
    threshold_pc,
    zeta_bar,
)

PROFILES = ("full", "smoke")

# Per-criterion parameters. Anything not listed in ``smoke`` falls back to ``full``.
_FULL = {
    1: {"n_gammas": 100, "n_ps": 200},
    2: {"ks": list(range(4, 11)), "n_levels": 12},
    3: {"epsilon": 2.0**-7, "n_samples": 20_000},
    4: {"epsilon_list": [2.0**-k for k in range(5, 10)], "n_samples": 4_000,
        "tail_epsilon": 2.0**-9, "tail_samples": 100_000},
    5: {"ks": list(range(40, 51))},
    6: {"epsilon": 2.0**-6, "n_samples": 20_000},
    7: {"epsilon": 2.0**-6, "n_samples": 20_000},
    8: {"n_cases": 100_000},
    9: {"n_perturbations": 100},
}
_SMOKE = {
    3: {"epsilon": 2.0**-4, "n_samples": 1_000},
    4: {"epsilon_list": [2.0**-k for k in range(3, 6)], "n_samples": 300,
        "tail_epsilon": 2.0**-5, "tail_samples": 2_000},
    6: {"epsilon": 2.0**-4, "n_samples": 1_000},
    7: {"epsilon": 2.0**-4, "n_samples": 1_000},
}

SCALING_REGION = carleson(-1.0, 1.0).rect()
# Unit-height box over [-1, 1]: its gamma = 1 first moment is 2 * int_0^1 y^(-1/2) dy = 4.
FIRST_MOMENT_REGION = UHPRect(-1.0, 1.0, 0.0, 1.0)
THRESHOLD_CUBE = carleson(0.0, 0.5)
THRESHOLD_GAMMA = 1.8
THRESHOLD_PS = (0.4, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75)
# Two boundary half cubes of side 1/2 sharing the split line x = 0.
PAIR_LEFT = UHPRect(-0.5, 0.0, 0.0, 0.5)
PAIR_RIGHT = UHPRect(0.0, 0.5, 0.0, 0.5)


@dataclass
class CriterionOutcome:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    tables: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        brief = ", ".join(f"{k}={_short(v)}" for k, v in self.details.get("headline", {}).items())
        return f"criterion {self.number:2d} [{status}] {self.title} ({brief}; {self.seconds:.1f}s)"

    def to_json(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "details": self.details, "seconds": self.seconds}


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _params(number: int, profile: str) -> dict:
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}, got {profile!r}")
    merged = dict(_FULL[number])
    if profile == "smoke":
        merged.update(_SMOKE.get(number, {}))
    return merged


def _report_details(report: DecompositionReport) -> dict:
    return {"checks": report.checks, "summary": report.summary, "slope": report.slope}


# ---------------------------------------------------------------------------

def exponent_algebra(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(1, profile)
    rng = np.random.default_rng(seed)
    gammas = rng.uniform(0.05, 1.95, cfg["n_gammas"])
    worst_root = 0.0
    sign_mismatch = 0
    ps = np.linspace(0.0, 4.0, cfg["n_ps"] + 1)[1:]
    for g in gammas:
        g = float(g)
        worst_root = max(worst_root, abs(zeta_bar(0.5, g) - 1), abs(zeta_bar(threshold_pc(g), g) - 1))
        for p in ps:
            negative = 1 - zeta_bar(float(p), g) < 0
            sign_mismatch += negative != (0.5 < p < threshold_pc(g))
    passed = worst_root <= 1e-12 and sign_mismatch == 0
    rows = "gamma,zeta_half,zeta_pc\n" + "".join(
        f"{g!r},{zeta_bar(0.5, g)!r},{zeta_bar(threshold_pc(g), g)!r}\n" for g in map(float, gammas)
    )
    details = {"headline": {"max_root_error": worst_root, "sign_mismatches": sign_mismatch},
               "n_gammas": len(gammas), "n_ps": len(ps)}
    return CriterionOutcome(1, "scaling-exponent algebra", passed, details, {"exponent_roots": rows})


def first_moments(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(2, profile)
    eps = np.array([2.0**-k for k in cfg["ks"]])
    values = np.array([deterministic_first_moment(FIRST_MOMENT_REGION, 1.0, float(e)) for e in eps])
    # Linear extrapolation in eps to eps -> 0.
    slope, intercept = np.polyfit(eps, values, 1)
    limit_error = abs(float(intercept) - 4.0)
    cube = carleson(-1.0, 1.0)
    slices = horizontal_slices(cube, cfg["n_levels"] - 1)
    gamma = math.sqrt(2.0)
    slice_values = [deterministic_first_moment(s, gamma, s.height) for s in slices]
    target = 2 * math.log(2.0)
    slice_error = max(abs(v - target) for v in slice_values)
    passed = limit_error < 1e-3 and slice_error <= 1e-12 * target
    table = "epsilon,expected_mass\n" + "".join(f"{e!r},{v!r}\n" for e, v in zip(eps.tolist(), values.tolist()))
    slice_table = "n,expected_mass\n" + "".join(f"{n},{v!r}\n" for n, v in enumerate(slice_values))
    details = {"headline": {"extrapolated": float(intercept), "slice_max_error": slice_error},
               "extrapolation_error": limit_error}
    return CriterionOutcome(2, "deterministic first moments", passed, details,
                            {"first_moment": table, "slice_first_moment": slice_table})


def exact_scaling(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(3, profile)
    report = scaling_check(SCALING_REGION, 0.5, 0.8, 1.0, cfg["epsilon"], cfg["n_samples"], seed, workers)
    s = report.summary
    details = {"headline": {"ratio": s["ratio"], "stderr": s["ratio_stderr"], "expected": s["expected_ratio"]},
               **_report_details(report), "parameters": report.parameters}
    return CriterionOutcome(3, "exact scaling relation", report.passed, details, {"scaling": report.to_csv()})


def threshold_localization(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(4, profile)
    scan = divergence_scan(THRESHOLD_CUBE, THRESHOLD_PS, THRESHOLD_GAMMA, cfg["epsilon_list"],
                           cfg["n_samples"], seed, workers)
    # A separate stream keeps the tail sample independent of the scan's finest level.
    tail, _ = tail_experiment(THRESHOLD_CUBE, THRESHOLD_GAMMA, cfg["tail_epsilon"], cfg["tail_samples"],
                              seed + 1, workers)
    passed = scan.passed and tail.passed
    details = {
        "headline": {"pc_estimate": scan.summary.get("pc_estimate"), "alpha_hat": tail.summary["alpha_hat"]},
        "scan": _report_details(scan),
        "tail": _report_details(tail),
    }
    return CriterionOutcome(4, "moment-threshold localization", passed, details,
                            {"scan": scan.to_csv(), "tail": tail.to_csv()})


def first_moment_dichotomy(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(5, profile)
    eps = np.array([2.0**-k for k in cfg["ks"]])
    x = np.log(1 / eps)
    rows = ["gamma,epsilon,expected_mass\n"]
    slopes = {}
    ok = True
    for gamma, theory in ((1.0, 0.0), (1.8, 1.8**2 / 2 - 1)):
        values = [deterministic_first_moment(FIRST_MOMENT_REGION, gamma, float(e)) for e in eps]
        slope = float(np.polyfit(x, np.log(values), 1)[0])
        slopes[f"slope[gamma={gamma:g}]"] = slope
        ok &= abs(slope - theory) <= 1e-6
        rows.extend(f"{gamma!r},{e!r},{v!r}\n" for e, v in zip(eps.tolist(), values))
    details = {"headline": slopes, "theory": {"slope[gamma=1]": 0.0, "slope[gamma=1.8]": 1.8**2 / 2 - 1}}
    return CriterionOutcome(5, "first-moment dichotomy", ok, details, {"dichotomy": "".join(rows)})


def decorrelation(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(6, profile)
    deltas = [0.25, 0.125]
    far = [UHPRect(d, PAIR_RIGHT.x1, PAIR_RIGHT.y0, PAIR_RIGHT.y1) for d in deltas]
    report = decorrelation_check(PAIR_LEFT, far, 0.4, 0.4, 1.0, deltas, cfg["epsilon"], cfg["n_samples"],
                                 seed, workers)
    headline = {f"slack[delta={r['scale']:g}]": r["slack_ratio"] for r in report.rows}
    details = {"headline": headline, **_report_details(report), "parameters": report.parameters}
    return CriterionOutcome(6, "decorrelation bound", report.passed, details, {"decorrelation": report.to_csv()})


def sokoban(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(7, profile)
    args = (PAIR_LEFT, PAIR_RIGHT, 0.4, 0.4, 1.0, 8, cfg["epsilon"])
    report = sokoban_check(*args, cfg["n_samples"], seed, workers)
    flat = sokoban_check(*args, 2, seed, workers, lambda_shift=0.0, noise="zero", scaling_strips=(2,))
    symmetric_gap = flat.summary["reflection_difference"]["value"]
    passed = report.passed and symmetric_gap == 0.0
    details = {"headline": {"checks_passed": sum(report.checks.values()), "checks": len(report.checks),
                            "zero_noise_gap": symmetric_gap},
               **_report_details(report), "parameters": report.parameters}
    return CriterionOutcome(7, "box-moving monotonicity", passed, details,
                            {"sokoban": report.to_csv(), "sokoban_zero_noise": flat.to_csv()})


def power_inequalities(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(8, profile)
    outcomes = fuzz_power_inequalities(cfg["n_cases"], seed)
    passed = all(o.passed for o in outcomes)
    details = {"headline": {o.proposition: o.violations for o in outcomes},
               "cases_per_proposition": cfg["n_cases"]}
    tables = {"fuzz_summary": fuzz_summary_csv(outcomes), "counterexamples": counterexamples_csv(outcomes)}
    return CriterionOutcome(8, "two-variable power inequalities", passed, details, tables)


def gaussian_comparisons(profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    cfg = _params(9, profile)
    checks: dict[str, bool] = {}
    rows = ["check,lhs,rhs,slack,method,tolerance\n"]

    def record(name, result, ok=None):
        checks[name] = result.holds if ok is None else ok
        rows.append(f"{name},{result.lhs!r},{result.rhs!r},{result.slack!r},{result.method},{result.tolerance!r}\n")

    independent = GaussianVectorSpec([[1.0, 0.0], [0.0, 1.0]])
    coupled = GaussianVectorSpec([[1.0, 0.5], [0.5, 1.0]])
    exact = slepian_verify(independent, coupled, [(0, 1)], [], ExpLinear((1.0, 1.0)))
    record("slepian_closed_form", exact, exact.lhs == math.e and exact.rhs == math.exp(1.5) and exact.holds)

    mono = kahane_monotonicity_check(cfg["n_perturbations"], seed)
    checks["kahane_second_moment_monotone"] = all(r.holds for r in mono)
    rows.append(f"kahane_second_moment_monotone,,,{min(r.slack for r in mono)!r},closed-form,0.0\n")

    shift = kahane_shift_constant(math.log(2.0), 1.0, 2.0)
    checks["shift_constant_exact"] = shift == 2.0

    # Numeric backends against the closed forms, on a random 3-d and a 4-d vector.
    rng = np.random.default_rng(seed)
    agreement = []
    for n in (3, 4):
        spec = GaussianVectorSpec(random_covariance(rng, n, 0.5))
        weights = rng.uniform(0.5, 1.5, n)
        closed = kahane_expectation(spec, weights, Power(2), "closed-form").value
        for method in ("quadrature", "quasi-MC") if n <= 3 else ("quasi-MC",):
            num = kahane_expectation(spec, weights, Power(2), method, seed)
            agreement.append((f"kahane_t2_{method}_n{n}", closed, num))
        product = RenormalizedPowerProduct(((0,), tuple(range(1, n))), (1, 1), 1.0)
        closed = product.closed_form(spec)
        num = functional_expectation(product, spec, "quasi-MC", seed)
        agreement.append((f"product_quasi-MC_n{n}", closed, num))
    for name, closed, num in agreement:
        ok = abs(num.value - closed) <= 5 * num.error + 1e-12 * abs(closed)
        checks[name] = ok
        rows.append(f"{name},{closed!r},{num.value!r},{num.value - closed!r},{num.method},{5 * num.error!r}\n")
    details = {"headline": {"checks_passed": sum(checks.values()), "checks": len(checks),
                            "shift_constant": shift},
               "checks": checks}
    return CriterionOutcome(9, "Gaussian comparison verifiers", all(checks.values()), details,
                            {"comparisons": "".join(rows)})


CRITERIA: dict[int, Callable[..., CriterionOutcome]] = {
    1: exponent_algebra,
    2: first_moments,
    3: exact_scaling,
    4: threshold_localization,
    5: first_moment_dichotomy,
    6: decorrelation,
    7: sokoban,
    8: power_inequalities,
    9: gaussian_comparisons,
}


def run_criterion(number: int, profile: str = "full", seed: int = 0, workers: int = 1) -> CriterionOutcome:
    start = time.perf_counter()
    outcome = CRITERIA[number](profile, seed, workers)
    outcome.seconds = time.perf_counter() - start
    return outcome


def run_all(profile: str = "full", seed: int = 0, workers: int = 1, only=None, on_outcome=None):
    outcomes = []
    for number in sorted(CRITERIA if only is None else only):
        outcome = run_criterion(number, profile, seed, workers)
        if on_outcome is not None:
            on_outcome(outcome)
        outcomes.append(outcome)
    return outcomes
