"""Moment estimation and the Monte Carlo experiments built on it.

Every experiment returns a ``DecompositionReport``: per-scale rows, an optional
fitted slope, named pass/fail checks and free-form summary values.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .geometry import CarlesonCube, UHPRect, horizontal_slices, vertical_slices
from .gmc import (
    GmcParams,
    MassResult,
    RegionMasses,
    _floor_integral,
    grid_log_weights,
    simulate_log_masses,
)
from .kernel import (
    CovarianceSpec,
    FactorizedCovariance,
    build_grid,
    factorize,
    validate_psd_shift,
)
from .sampler import iter_value_blocks, replicate_uniforms

MOM_BUCKETS = 16
MOM_TRIGGER = 0.8  # fraction of the threshold from which median-of-means is used
SCALING_MARGIN = 0.1
EXPERIMENT_MAX_CELLS = 1 << 18
LAMBDA_CANDIDATES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
_SQRT2 = math.sqrt(2.0)
_MEDIAN_EFFICIENCY = math.sqrt(math.pi / 2)
_LOG_MAX_FLOAT = math.log(np.finfo(float).max)


# Exponent algebra -----------------------------------------------------------

def zeta_bar(p: float, gamma: float) -> float:
    """Scaling exponent: E[mu(rA)^p] = r^zeta_bar(p) E[mu(A)^p]."""
    GmcParams(gamma)
    return (2 + gamma**2 / 2) * p - gamma**2 * p * p


def threshold_pc(gamma: float) -> float:
    """Largest p for which E[mu(Q)^p] is finite is anything below 2 / gamma^2."""
    GmcParams(gamma)
    return 2 / gamma**2


def crude_pc_bound(gamma: float) -> float:
    """Upper bound 1/2 + 1/gamma^2 on the threshold, valid for gamma >= sqrt(2)."""
    GmcParams(gamma)
    if gamma < _SQRT2:
        raise ValueError(f"the crude bound needs gamma >= sqrt(2), got {gamma}")
    return min(threshold_pc(gamma), 0.5 + 1 / gamma**2)


def divergence_slope_theory(p: float, gamma: float) -> float:
    """Growth rate of E[mu_eps(Q)^p] in log(1/eps): zero below the threshold,
    1 - zeta_bar(p) above it."""
    return 1 - zeta_bar(p, gamma) if p > threshold_pc(gamma) else 0.0


# Estimators -----------------------------------------------------------------

@dataclass(frozen=True)
class MomentEstimate:
    p: float
    n_samples: int
    mean: float
    stderr: float
    log_mean: float
    method: str

    def __post_init__(self) -> None:
        if self.n_samples < 2:
            raise ValueError("a moment estimate needs at least 2 samples")


def _as_log_masses(masses) -> tuple[np.ndarray, float | None]:
    if isinstance(masses, np.ndarray):
        return masses.astype(float, copy=False).ravel(), None
    masses = list(masses)
    if masses and isinstance(masses[0], MassResult):
        return np.array([m.log_mass for m in masses]), masses[0].params.gamma
    return np.asarray(masses, dtype=float).ravel(), None


def _pick_method(p: float, gamma: float | None, n: int, method: str) -> str:
    if method != "auto":
        if method not in ("plain", "median-of-means"):
            raise ValueError(f"unknown estimator {method!r}")
        return method
    if gamma is not None and p >= MOM_TRIGGER * threshold_pc(gamma) and n >= 2 * MOM_BUCKETS:
        return "median-of-means"
    return "plain"


def mean_from_log_terms(terms: np.ndarray, p: float = float("nan"), method: str = "plain") -> MomentEstimate:
    """Estimate E[exp(T)] from samples T without overflowing."""
    terms = np.asarray(terms, dtype=float)
    n = terms.size
    if n == 0:
        raise ValueError("no samples")
    if n < 2:
        raise ValueError("need at least 2 samples")
    top = float(np.max(terms))
    scaled = np.exp(terms - top)
    if method == "median-of-means":
        bucket_means = np.array([b.mean() for b in np.array_split(scaled, MOM_BUCKETS)])
        centre = float(np.median(bucket_means))
        spread = _MEDIAN_EFFICIENCY * float(bucket_means.std(ddof=1)) / math.sqrt(MOM_BUCKETS)
    else:
        centre = float(scaled.mean())
        spread = float(scaled.std(ddof=1)) / math.sqrt(n)
    log_mean = top + math.log(centre)
    return MomentEstimate(p, n, _exp_or_inf(log_mean), _exp_or_inf(top) * spread, log_mean, method)


def _exp_or_inf(x: float) -> float:
    # log_mean stays exact when the moment itself is past the float range.
    return math.exp(x) if x < _LOG_MAX_FLOAT else math.inf


def estimate_moment(masses, p: float, gamma: float | None = None, method: str = "auto") -> MomentEstimate:
    """E[mass^p] from log masses (array or MassResult list).

    Median-of-means over 16 buckets replaces the plain mean once p reaches
    0.8 of the threshold, where rare huge masses dominate the plain mean.
    """
    logs, found_gamma = _as_log_masses(masses)
    if logs.size == 0:
        raise ValueError("estimate_moment got no masses")
    if not math.isfinite(p):
        raise ValueError(f"p must be finite, got {p}")
    gamma = gamma if gamma is not None else found_gamma
    chosen = _pick_method(p, gamma, logs.size, method)
    return mean_from_log_terms(p * logs, p, chosen)


# Reports --------------------------------------------------------------------

@dataclass
class DecompositionReport:
    experiment: str
    parameters: dict
    rows: list[dict] = field(default_factory=list)
    slope: float | None = None
    slope_ci: tuple[float, float] | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_csv(self) -> str:
        columns: list[str] = []
        for row in self.rows:
            columns.extend(c for c in row if c not in columns)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "slope": self.slope,
            "slope_ci": list(self.slope_ci) if self.slope_ci else None,
            "checks": self.checks,
            "passed": self.passed,
            "summary": self.summary,
        }


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _weighted_slope(x: np.ndarray, y: np.ndarray, sigma: np.ndarray | None) -> tuple[float, float]:
    """Least squares slope of y on x and its standard error."""
    if sigma is None or not np.all(sigma > 0):
        w = np.ones_like(x)
    else:
        w = 1.0 / sigma**2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    if sigma is None or not np.all(sigma > 0):
        resid = y - ym - slope * (x - xm)
        dof = max(len(x) - 2, 1)
        se = math.sqrt(float(np.sum(resid**2)) / dof / sxx)
    else:
        se = math.sqrt(1.0 / sxx)
    return slope, se


# Shared plumbing ------------------------------------------------------------

def _factor(
    region: UHPRect, epsilon: float, lambda_shift: float | None, gamma: float, p: float
) -> tuple[FactorizedCovariance, float]:
    grid = build_grid(region, epsilon, max_cells=EXPERIMENT_MAX_CELLS)
    if lambda_shift is None:
        choice = validate_psd_shift(grid, LAMBDA_CANDIDATES, gamma, p)
        return choice.factor, choice.lambda_shift
    return factorize(grid, CovarianceSpec(epsilon, lambda_shift)), lambda_shift


def _coupled_logs(
    regions: Sequence[UHPRect],
    gamma: float,
    epsilon: float,
    n_samples: int,
    seed: int,
    workers: int,
    lambda_shift: float | None,
    noise: str,
    p_hint: float,
    first_id: int = 0,
) -> tuple[np.ndarray, float]:
    box = regions[0]
    for r in regions[1:]:
        box = box.bounding_union(r)
    fac, lam = _factor(box, epsilon, lambda_shift, gamma, p_hint)
    logs = simulate_log_masses(fac, regions, GmcParams(gamma), seed, n_samples, first_id, workers, noise)
    return logs, lam


# First moments --------------------------------------------------------------

def deterministic_first_moment(region: UHPRect, gamma: float, epsilon: float) -> float:
    """Expected mass of ``region`` at regularization eps, in closed form.

    Summing the exact cell weights telescopes to width * integral of
    y^(-gamma^2/2) over the region's heights, starting at eps/2 instead of 0
    when gamma >= sqrt(2).
    """
    GmcParams(gamma)
    if not (math.isfinite(epsilon) and 0 < epsilon <= region.height):
        raise ValueError(f"epsilon must lie in (0, {region.height}], got {epsilon}")
    floor = region.y0
    if floor == 0.0 and gamma >= _SQRT2:
        floor = 0.5 * epsilon
    return region.width * _floor_integral(floor, region.y1, gamma)


# Scaling relation -----------------------------------------------------------

def scaling_check(
    region: UHPRect,
    r: float,
    p: float,
    gamma: float,
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    noise: str = "gaussian",
    margin: float = SCALING_MARGIN,
) -> DecompositionReport:
    """Compare E[mu(rA)^p] at spacing r*eps with r^zeta_bar(p) E[mu(A)^p] at eps.

    The shrunk region must use the shrunk spacing; at a common spacing the two
    discretizations are not related by the scaling map.
    """
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    pc = threshold_pc(gamma)
    if p > pc - margin:
        raise ValueError(
            f"p={p} is within {margin} of the threshold {pc:.6g}; lower p for a meaningful check"
        )
    fac, lam = _factor(region, epsilon, lambda_shift, gamma, p)
    small = region.scaled(r)
    small_fac = factorize(build_grid(small, r * epsilon, EXPERIMENT_MAX_CELLS), CovarianceSpec(r * epsilon, lam))
    params = GmcParams(gamma)
    logs_big = simulate_log_masses(fac, [region], params, seed, n_samples, 0, workers, noise)[0]
    logs_small = simulate_log_masses(small_fac, [small], params, seed, n_samples, n_samples, workers, noise)[0]
    big = estimate_moment(logs_big, p, gamma)
    little = estimate_moment(logs_small, p, gamma)
    expected = r ** zeta_bar(p, gamma)
    ratio = little.mean / big.mean
    rel = math.hypot(big.stderr / big.mean, little.stderr / little.mean)
    ratio_se = ratio * rel
    # deterministic runs (zero noise, p = 0) agree with the identity to rounding
    allowed = max(3 * ratio_se, 1e-12 * expected)
    z = (ratio - expected) / ratio_se if ratio_se > 0 else (0.0 if abs(ratio - expected) <= allowed else math.inf)
    report = DecompositionReport(
        "scaling",
        {"region": region.to_json(), "r": r, "p": p, "gamma": gamma, "epsilon": epsilon,
         "n_samples": n_samples, "seed": seed, "lambda_shift": lam, "noise": noise},
        rows=[
            {"scale": 1.0, "epsilon": epsilon, "estimate": big.mean, "stderr": big.stderr, "method": big.method},
            {"scale": r, "epsilon": r * epsilon, "estimate": little.mean, "stderr": little.stderr, "method": little.method},
        ],
    )
    report.summary = {"ratio": ratio, "ratio_stderr": ratio_se, "expected_ratio": expected, "z_score": z}
    report.checks["ratio_within_3_stderr"] = abs(ratio - expected) <= allowed
    return report


# Divergence scan ------------------------------------------------------------

def simulate_rooted_log_masses(
    fac: FactorizedCovariance,
    region: UHPRect,
    params: GmcParams,
    seed: int,
    count: int,
    first_id: int = 0,
    workers: int = 1,
) -> tuple[np.ndarray, float]:
    """Log masses of ``region`` under the size-biased (rooted) law.

    A root cell i is drawn with probability w_i / W and the field is tilted by
    gamma * Cov(., i). For any p, E[mu^p] = W * E_rooted[mu^(p-1)], which for
    p < 1 is a negative moment with light tails. Returns (log masses, log W).
    """
    g = fac.grid
    evaluator = RegionMasses(g, fac.diag_variances, [region], params)
    sx, sy = evaluator.slices[0]
    cols = np.arange(g.n_x)[sx]
    rows = np.arange(g.n_y)[sy]
    log_w = grid_log_weights(g, params.gamma)[sx, sy]
    log_total = float(logsumexp(log_w))
    cdf = np.cumsum(np.exp(log_w - log_total).ravel())
    cdf /= cdf[-1]
    g2 = params.gamma**2
    out = np.empty(count)
    for ids, values in iter_value_blocks(fac, seed, first_id, count, workers):
        u = np.array([replicate_uniforms(seed, int(rid), 1)[0] for rid in ids])
        picks = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        root_x = cols[picks // rows.size]
        root_y = rows[picks % rows.size]
        lag = np.abs(np.arange(g.n_x)[None, :] - root_x[:, None])
        shift = g2 * fac.lags[lag, :, root_y[:, None]]
        shift[np.arange(len(ids)), root_x, root_y] += g2 * fac.jitter_used
        out[ids - first_id] = evaluator(values, shift)[0]
    return out, log_total


def _hinge_crossing(ps: np.ndarray, slopes: np.ndarray, sigma: np.ndarray) -> float:
    """Kink location of the best fit slope(p) ~ kappa * max(0, p - p*), kappa >= 0."""
    w = 1.0 / np.maximum(sigma, 1e-12) ** 2
    best, best_cost = float(ps[0]), math.inf
    for cand in np.linspace(ps.min(), ps.max(), 2001):
        h = np.maximum(ps - cand, 0.0)
        denom = np.sum(w * h * h)
        kappa = max(float(np.sum(w * h * slopes) / denom), 0.0) if denom > 0 else 0.0
        cost = float(np.sum(w * (slopes - kappa * h) ** 2))
        if cost < best_cost - 1e-15:
            best, best_cost = float(cand), cost
    return best


def divergence_scan(
    cube: CarlesonCube,
    p: float | Sequence[float],
    gamma: float,
    epsilon_list: Sequence[float],
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    estimator: str = "rooted",
    slope_tol: float = 0.1,
    crossing_tol: float = 0.08,
) -> DecompositionReport:
    """Growth of E[mu_eps(Q)^p] as eps shrinks, for one p or a grid of p.

    ``estimator`` is ``rooted`` (size-biased, see simulate_rooted_log_masses)
    or ``plain``. With three or more p values the threshold is estimated as the
    kink of a hinge fit to the slopes.
    """
    ps = np.atleast_1d(np.asarray(p, dtype=float))
    eps = [float(e) for e in epsilon_list]
    if len(eps) < 3:
        raise ValueError(f"need at least 3 epsilon values, got {len(eps)}")
    for a, b in zip(eps, eps[1:]):
        if not math.isclose(a / b, 2.0, rel_tol=1e-12):
            raise ValueError(f"epsilon_list must be dyadic and descending, got {eps}")
    if np.any(ps < 0):
        raise ValueError("divergence_scan needs p >= 0")
    if estimator not in ("rooted", "plain"):
        raise ValueError(f"unknown estimator {estimator!r}")
    params = GmcParams(gamma)
    region = cube.rect()
    log_est = np.empty((len(eps), ps.size))
    rel_se = np.empty((len(eps), ps.size))
    report = DecompositionReport(
        "scan",
        {"cube": cube.to_json(), "p": ps.tolist(), "gamma": gamma, "epsilon_list": eps,
         "n_samples": n_samples, "seed": seed, "estimator": estimator},
    )
    lambdas = []
    for i, e in enumerate(eps):
        fac, lam = _factor(region, e, lambda_shift, gamma, float(ps.max()))
        lambdas.append(lam)
        if estimator == "rooted":
            logs, log_w = simulate_rooted_log_masses(fac, region, params, seed, n_samples, i * n_samples, workers)
            ests = [mean_from_log_terms((q - 1) * logs, q) for q in ps]
            ests = [MomentEstimate(q, m.n_samples, m.mean * math.exp(log_w), m.stderr * math.exp(log_w),
                                   m.log_mean + log_w, "rooted") for q, m in zip(ps, ests)]
        else:
            logs = simulate_log_masses(fac, [region], params, seed, n_samples, i * n_samples, workers)[0]
            ests = [estimate_moment(logs, q, gamma) for q in ps]
        for j, m in enumerate(ests):
            log_est[i, j] = m.log_mean
            rel_se[i, j] = m.stderr / m.mean
            report.rows.append({"scale": e, "p": float(ps[j]), "estimate": m.mean, "stderr": m.stderr,
                                "log_estimate": m.log_mean, "method": m.method})
    report.parameters["lambda_shift"] = lambdas
    x = np.log(1.0 / np.array(eps))
    slopes, slope_se = [], []
    for j, q in enumerate(ps):
        s, se = _weighted_slope(x, log_est[:, j], rel_se[:, j])
        theory = divergence_slope_theory(float(q), gamma)
        slopes.append(s)
        slope_se.append(se)
        report.summary[f"slope[p={q:g}]"] = {"slope": s, "stderr": se, "theory": theory}
        report.checks[f"slope[p={q:g}]"] = abs(s - theory) <= slope_tol
    if ps.size == 1:
        report.slope = slopes[0]
        report.slope_ci = (slopes[0] - 1.96 * slope_se[0], slopes[0] + 1.96 * slope_se[0])
    if ps.size >= 3:
        crossing = _hinge_crossing(ps, np.array(slopes), np.array(slope_se))
        report.summary["pc_estimate"] = crossing
        report.summary["pc_theory"] = threshold_pc(gamma)
        report.checks["pc_crossing"] = abs(crossing - threshold_pc(gamma)) <= crossing_tol
    return report


# Slices ---------------------------------------------------------------------

def slice_moment_sequence(
    cube: CarlesonCube,
    p: float,
    gamma: float,
    n_max: int,
    n_samples: int,
    epsilon: float | None = None,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    noise: str = "gaussian",
) -> DecompositionReport:
    """E[mu(L_n)^p] for the dyadic horizontal layers n = 0..n_max.

    Diagnostic only: reports the fitted per-level ratio next to 2^(1 - zeta_bar(p)).
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if n_max < 2:
        raise ValueError(f"n_max must be >= 2, got {n_max}")
    r = cube.half_width
    slices = horizontal_slices(cube, n_max)
    if epsilon is None:
        epsilon = r * 2.0 ** -(n_max + 2)
    logs, lam = _coupled_logs(slices, gamma, epsilon, n_samples, seed, workers, lambda_shift, noise, p)
    # the grid spans the slices only; its floor sits at the lowest slice
    ests = [estimate_moment(row, p, gamma) for row in logs]
    report = DecompositionReport(
        "slices",
        {"cube": cube.to_json(), "p": p, "gamma": gamma, "n_max": n_max, "epsilon": epsilon,
         "n_samples": n_samples, "seed": seed, "lambda_shift": lam, "noise": noise},
    )
    for n, (s, m) in enumerate(zip(slices, ests)):
        report.rows.append({"scale": s.y1, "n": n, "estimate": m.mean, "stderr": m.stderr, "method": m.method})
    levels = np.arange(n_max + 1, dtype=float)
    y = np.array([m.log_mean for m in ests])
    sig = np.array([m.stderr / m.mean for m in ests])
    slope, se = _weighted_slope(levels, y, sig if np.all(sig > 0) else None)
    report.slope = slope
    report.slope_ci = (slope - 1.96 * se, slope + 1.96 * se)
    report.summary = {
        "per_level_ratio": math.exp(slope),
        "theory_ratio": 2.0 ** (1 - zeta_bar(p, gamma)),
    }
    return report


# Cross moments --------------------------------------------------------------

def cross_moment_from_logs(
    log_a: np.ndarray,
    log_b: np.ndarray,
    k: float,
    q: float,
    gamma: float | None = None,
    same_region: bool = False,
    method: str = "auto",
) -> MomentEstimate:
    p = k + q
    terms = p * log_a if same_region else k * log_a + q * log_b
    return mean_from_log_terms(terms, p, _pick_method(p, gamma, len(terms), method))


def cross_moment(
    a: UHPRect,
    b: UHPRect,
    k: float,
    q: float,
    gamma: float,
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    noise: str = "gaussian",
) -> MomentEstimate:
    """E[mu(A)^k mu(B)^q] with both masses taken from the same field."""
    if k <= 0 or q <= 0:
        raise ValueError(f"k and q must be positive, got {k}, {q}")
    same = a == b
    regions = [a] if same else [a, b]
    logs, _ = _coupled_logs(regions, gamma, epsilon, n_samples, seed, workers, lambda_shift, noise, k + q)
    return cross_moment_from_logs(logs[0], logs[-1], k, q, gamma, same)


def _paired_excess(c: np.ndarray, a: np.ndarray, b: np.ndarray, factor: float) -> tuple[float, float]:
    """mean(c) - factor*mean(a)*mean(b) and its delta-method standard error."""
    n = len(c)
    ma, mb = float(a.mean()), float(b.mean())
    excess = float(c.mean()) - factor * ma * mb
    influence = c - factor * (mb * a + ma * b)
    return excess, float(influence.std(ddof=1)) / math.sqrt(n)


def decorrelation_bound_factor(delta: float, k: float, q: float, gamma: float, lambda_shift: float = 0.0) -> float:
    """delta^(-2 k q gamma^2), inflated by the shift since cross covariances are
    then bounded by -2 ln delta + lambda."""
    return delta ** (-2 * k * q * gamma**2) * math.exp(gamma**2 * k * q * lambda_shift)


def decorrelation_check(
    left: UHPRect,
    right_far: UHPRect | Sequence[UHPRect],
    k: float,
    q: float,
    gamma: float,
    delta: float | Sequence[float],
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    noise: str = "gaussian",
) -> DecompositionReport:
    """Check cross <= bound_factor * E[mu(L)^k] E[mu(R)^q] for delta-separated boxes.

    Several (right box, delta) pairs may be passed; all share one simulation.
    """
    rights = [right_far] if isinstance(right_far, UHPRect) else list(right_far)
    deltas = [float(delta)] * len(rights) if np.isscalar(delta) else [float(d) for d in delta]
    if len(deltas) != len(rights):
        raise ValueError("need one delta per right-hand box")
    for box, d in zip(rights, deltas):
        if not d > 0:
            raise ValueError(f"delta must be positive, got {d}")
        if left.gap_to(box) < d * (1 - 1e-12):
            raise ValueError(f"regions {left} and {box} are {left.gap_to(box)} apart, less than delta={d}")
    logs, lam = _coupled_logs([left, *rights], gamma, epsilon, n_samples, seed, workers, lambda_shift, noise, k + q)
    la = logs[0] - logs[0].max()
    report = DecompositionReport(
        "decorrelation",
        {"left": left.to_json(), "right": [b.to_json() for b in rights], "k": k, "q": q, "gamma": gamma,
         "delta": deltas, "epsilon": epsilon, "n_samples": n_samples, "seed": seed, "lambda_shift": lam,
         "noise": noise},
    )
    a = np.exp(k * la)
    for box, d, lr in zip(rights, deltas, logs[1:]):
        lb = lr - lr.max()
        b = np.exp(q * lb)
        c = a * b
        factor = decorrelation_bound_factor(d, k, q, gamma, lam)
        excess, se = _paired_excess(c, a, b, factor)
        slack = float(c.mean()) / (factor * float(a.mean()) * float(b.mean()))
        scale = math.exp(k * logs[0].max() + q * lr.max())
        report.rows.append({
            "scale": d, "cross": float(c.mean()) * scale, "cross_stderr": float(c.std(ddof=1)) / math.sqrt(len(c)) * scale,
            "product": float(a.mean() * b.mean()) * scale, "bound_factor": factor, "slack_ratio": slack,
            "independence_ratio": slack * factor, "excess": excess * scale, "excess_stderr": se * scale,
        })
        report.checks[f"bound[delta={d:g}]"] = excess <= 3 * se
    return report


def sokoban_check(
    left: UHPRect,
    right: UHPRect,
    k: float,
    q: float,
    gamma: float,
    n_strips: int,
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    noise: str = "gaussian",
    j_max: int = 4,
    scaling_strips: Sequence[int] = (2, 4, 8),
) -> DecompositionReport:
    """Box-moving comparisons of cross moments between a boundary half cube and
    thin strips of its neighbour.

    Checks (within 3 paired standard errors): the cross moment with the j-th
    strip away from the split line never exceeds that with a nearer strip, and
    the adjacent strip on the other side gives no more than the mirror strip
    inside ``left``. The decay of the adjacent cross moment with the strip
    width is fitted over ``scaling_strips`` and reported.
    """
    if not (left.x1 == right.x0 and left.y0 == right.y0 and left.y1 == right.y1):
        raise ValueError(f"{left} and {right} are not adjacent halves")
    if not 1 <= j_max <= n_strips:
        raise ValueError(f"need 1 <= j_max <= n_strips, got {j_max}, {n_strips}")
    outward = vertical_slices(right, n_strips, toward=right.x0)[:j_max]
    mirror = vertical_slices(left, n_strips, toward=left.x1)[0]
    adjacent = [vertical_slices(right, n, toward=right.x0)[0] for n in scaling_strips]
    regions = [left, *outward, mirror, *adjacent]
    logs, lam = _coupled_logs(regions, gamma, epsilon, n_samples, seed, workers, lambda_shift, noise, k + q)
    base = k * logs[0]
    terms = [base + q * row for row in logs[1:]]
    top = max(float(t.max()) for t in terms)
    vals = [np.exp(t - top) for t in terms]
    n = logs.shape[1]
    cross = [float(v.mean()) * math.exp(top) for v in vals]
    se = [float(v.std(ddof=1)) / math.sqrt(n) * math.exp(top) for v in vals]

    def paired(i: int, j: int) -> tuple[float, float]:
        d = vals[i] - vals[j]
        return float(d.mean()) * math.exp(top), float(d.std(ddof=1)) / math.sqrt(n) * math.exp(top)

    report = DecompositionReport(
        "sokoban",
        {"left": left.to_json(), "right": right.to_json(), "k": k, "q": q, "gamma": gamma,
         "n_strips": n_strips, "epsilon": epsilon, "n_samples": n_samples, "seed": seed,
         "lambda_shift": lam, "noise": noise, "scaling_strips": list(scaling_strips)},
    )
    width = right.width / n_strips
    for j in range(j_max):
        report.rows.append({"scale": width, "box": f"R{j + 1}", "cross": cross[j], "stderr": se[j]})
    report.rows.append({"scale": width, "box": "L1", "cross": cross[j_max], "stderr": se[j_max]})
    for i in range(j_max):
        for j in range(i + 1, j_max):
            diff, dse = paired(j, i)
            report.checks[f"moving_away[R{i + 1}>=R{j + 1}]"] = diff <= 3 * dse
    diff, dse = paired(0, j_max)
    report.checks["reflection[R1<=L1]"] = diff <= 3 * dse
    report.summary["reflection_difference"] = {"value": diff, "stderr": dse}
    adj = cross[j_max + 1:]
    widths = np.array([right.width / n for n in scaling_strips])
    for n, w, c, s in zip(scaling_strips, widths, adj, se[j_max + 1:]):
        report.rows.append({"scale": float(w), "box": f"adjacent[N={n}]", "cross": c, "stderr": s})
    if len(adj) >= 2:
        sig = np.array(se[j_max + 1:]) / np.array(adj)
        slope, sse = _weighted_slope(np.log(widths), np.log(adj), sig if np.all(sig > 0) else None)
        report.slope = slope
        report.slope_ci = (slope - 1.96 * sse, slope + 1.96 * sse)
        ref = estimate_moment(logs[0], k + q, gamma)
        report.summary["width_exponent"] = slope
        report.summary["reference_moment"] = ref.mean
    return report


# Tail index -----------------------------------------------------------------

@dataclass(frozen=True)
class TailIndexEstimate:
    alpha_hat: float
    k: int
    ci_low: float
    ci_high: float
    n_samples: int

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def default_hill_k(n: int) -> int:
    return int(round(n ** (2 / 3)))


def tail_index(masses, k: int | None = None) -> TailIndexEstimate:
    """Hill estimate of the power-law tail exponent of the masses."""
    logs, _ = _as_log_masses(masses)
    n = logs.size
    k = default_hill_k(n) if k is None else int(k)
    if k < 20:
        raise ValueError(f"Hill estimator needs k >= 20, got {k}")
    if n < 10 * k:
        raise ValueError(f"Hill estimator needs at least 10*k = {10 * k} samples, got {n}")
    ordered = np.sort(logs)[::-1]
    spacing = float(np.mean(ordered[:k] - ordered[k]))
    if not spacing > 0:
        raise ValueError("top order statistics are tied; the Hill estimator is undefined")
    alpha = 1.0 / spacing
    half = 1.96 / math.sqrt(k)
    return TailIndexEstimate(alpha, k, alpha * (1 - half), alpha * (1 + half), n)


def hill_profile(masses, ks: Sequence[int]) -> list[TailIndexEstimate]:
    return [tail_index(masses, k) for k in ks]


def hill_is_stable(profile: Sequence[TailIndexEstimate]) -> bool:
    """True when every confidence interval covers the middle estimate; a
    drifting profile signals no power-law regime."""
    middle = profile[len(profile) // 2]
    return all(e.covers(middle.alpha_hat) for e in profile)


def tail_experiment(
    cube: CarlesonCube,
    gamma: float,
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
    lambda_shift: float | None = None,
    k: int | None = None,
    tolerance: float = 0.15,
) -> tuple[DecompositionReport, np.ndarray]:
    """Hill tail index of mu_eps(Q) against the threshold 2 / gamma^2."""
    region = cube.rect()
    logs, lam = _coupled_logs([region], gamma, epsilon, n_samples, seed, workers, lambda_shift, "gaussian", 1.0)
    logs = logs[0]
    est = tail_index(logs, k)
    ks = sorted({max(20, int(est.k * f)) for f in (0.25, 0.5, 1.0, 2.0, 4.0) if 10 * max(20, int(est.k * f)) <= logs.size})
    profile = hill_profile(logs, ks)
    pc = threshold_pc(gamma)
    report = DecompositionReport(
        "tail",
        {"cube": cube.to_json(), "gamma": gamma, "epsilon": epsilon, "n_samples": n_samples,
         "seed": seed, "lambda_shift": lam, "k": est.k},
    )
    for e in profile:
        report.rows.append({"scale": e.k, "k": e.k, "alpha_hat": e.alpha_hat, "ci_low": e.ci_low, "ci_high": e.ci_high})
    report.summary = {"alpha_hat": est.alpha_hat, "ci": [est.ci_low, est.ci_high], "pc": pc,
                      "profile_stable": hill_is_stable(profile)}
    report.checks["alpha_within_tolerance"] = abs(est.alpha_hat - pc) <= tolerance
    report.checks["ci_covers_pc"] = est.covers(pc)
    return report, logs
