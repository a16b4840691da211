"""Elementary two-variable power inequalities and Gaussian comparison
inequalities on small Gaussian vectors.

The two-variable checks are evaluated in normalized form: with M = max(x, y)
and t = min(x, y) / M, every term is M^s times a polynomial-like expression in
t, so symmetric points (t = 1) and degenerate points (t = 0) cancel exactly.

Gaussian expectations come from one of three backends: closed-form
moment-generating formulas, tensor Gauss-Hermite quadrature (n <= 3), or
scrambled Sobol points (n <= 6). Numeric backends report an error estimate
and a comparison only fails when the slack is below -5 times that estimate.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.special import roots_hermite

MAX_DIMENSION = 6
QUADRATURE_MAX_DIMENSION = 3
QUADRATURE_NODES = 64
QMC_POINTS = 1 << 16
QMC_SCRAMBLES = 16
ERROR_MULTIPLE = 5.0
RELATIVE_SLACK = 1e-12
METHODS = ("closed-form", "quadrature", "quasi-MC")

# Powers beyond this expand into n**p monomials, which stops being cheap.
_MAX_CLOSED_POWER = 6


@dataclass(frozen=True)
class ComparisonResult:
    """Outcome of checking lhs <= rhs."""

    lhs: float
    rhs: float
    slack: float
    method: str
    tolerance: float

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.slack):
            raise ValueError(f"slack is not finite: lhs={self.lhs}, rhs={self.rhs}")

    @property
    def holds(self) -> bool:
        return self.slack >= -self.tolerance


def _result(lhs: float, rhs: float, slack: float, method: str = "closed-form", tolerance: float | None = None):
    if tolerance is None:
        tolerance = RELATIVE_SLACK * max(abs(lhs), abs(rhs), 1.0)
    return ComparisonResult(float(lhs), float(rhs), float(slack), method, float(tolerance))


# ---------------------------------------------------------------------------
# Two-variable power inequalities

def _normalize(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)) or np.any(x < 0) or np.any(y < 0):
        raise ValueError("x and y must be finite and non-negative")
    big = np.maximum(x, y)
    safe = np.where(big > 0, big, 1.0)
    ratio = np.where(big > 0, np.minimum(x, y) / safe, 0.0)
    return big, ratio


def _pair(ratio, a, b):
    # x^a y^b + x^b y^a divided by M^(a+b); symmetric so the order of x, y is irrelevant.
    return ratio**a + ratio**b


def _scale(big, s):
    # 0**0 == 1 matches the convention x^0 = 1 used by the inequalities.
    return big**s


def muirhead_terms(x, y, p1, q1, p2, q2):
    """(smaller side, larger side) of the majorization inequality, vectorized."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    if np.any(p1 < 0) or np.any(p2 < 0) or np.any(p1 > q1) or np.any(p2 > q2):
        raise ValueError("need 0 <= p1 <= q1 and 0 <= p2 <= q2")
    if not np.allclose(p1 + q1, p2 + q2, rtol=1e-12, atol=1e-12):
        raise ValueError("exponent sums must agree: p1 + q1 == p2 + q2")
    if np.any(q1 - p1 < q2 - p2 - 1e-12):
        raise ValueError("(p1, q1) must be at least as spread as (p2, q2)")
    big, ratio = _normalize(x, y)
    m = _scale(big, p1 + q1)
    return m * _pair(ratio, p2, q2), m * _pair(ratio, p1, q1)


def check_muirhead(x: float, y: float, p1: float, q1: float, p2: float, q2: float) -> ComparisonResult:
    """x^p2 y^q2 + x^q2 y^p2 <= x^p1 y^q1 + x^q1 y^p1 for the more spread pair (p1, q1)."""
    lhs, rhs = muirhead_terms(x, y, p1, q1, p2, q2)
    big, ratio = _normalize(x, y)
    slack = _scale(big, p1 + q1) * ((_pair(ratio, p1, q1)) - _pair(ratio, p2, q2))
    return _result(lhs, rhs, slack)


def super_constant(k: int) -> int:
    return 2**k - 1


def converse_super_terms(x, y, k, q):
    k = np.asarray(k)
    q = np.asarray(q, dtype=float)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise ValueError("k must be an integer >= 1")
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("q must lie in [0, 1]")
    big, ratio = _normalize(x, y)
    s = k + q
    m = _scale(big, s)
    lhs = m * (1.0 + ratio) ** s
    rhs = m * (1.0 + ratio**s + (2.0**k - 1) * _pair(ratio, k, q))
    return lhs, rhs


def check_converse_super(x: float, y: float, k: int, q: float) -> ComparisonResult:
    """(x+y)^(k+q) <= x^(k+q) + y^(k+q) + (2^k - 1)(x^k y^q + x^q y^k)."""
    if int(k) != k:
        raise ValueError(f"k must be an integer, got {k!r}")
    lhs, rhs = converse_super_terms(x, y, k, q)
    return _result(lhs, rhs, rhs - lhs)


def converse_sub_terms(x, y, p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("p and q must be positive")
    s = p + q
    if np.any(s < 0.5) or np.any(s > 1):
        raise ValueError("p + q must lie in [1/2, 1]")
    big, ratio = _normalize(x, y)
    m = _scale(big, s)
    lhs = m * (1.0 + ratio**s - 2.0 * _pair(ratio, p, q))
    rhs = m * (1.0 + ratio) ** s
    return lhs, rhs


def check_converse_sub(x: float, y: float, p: float, q: float) -> ComparisonResult:
    """x^(p+q) + y^(p+q) - 2(x^p y^q + x^q y^p) <= (x+y)^(p+q)."""
    lhs, rhs = converse_sub_terms(x, y, p, q)
    return _result(lhs, rhs, rhs - lhs)


def symmetric_sub_terms(x, y, p):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.25) or np.any(p > 0.5):
        raise ValueError("p must lie in [1/4, 1/2]")
    big, ratio = _normalize(x, y)
    m = _scale(big, 2 * p)
    lhs = m * (1.0 + ratio ** (2 * p))
    rhs = m * ((1.0 + ratio) ** (2 * p) + math.sqrt(2.0) * ratio**p)
    return lhs, rhs


def check_converse_sub_symmetric(x: float, y: float, p: float) -> ComparisonResult:
    """x^2p + y^2p <= (x+y)^2p + sqrt(2) x^p y^p for 1/4 <= p <= 1/2."""
    lhs, rhs = symmetric_sub_terms(x, y, p)
    return _result(lhs, rhs, rhs - lhs)


@dataclass(frozen=True)
class FuzzOutcome:
    proposition: str
    cases: int
    violations: int
    worst_relative_slack: float
    counterexamples: list[dict] = field(default_factory=list, compare=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _fuzz_points(rng: np.random.Generator, n: int, high: float):
    x = rng.uniform(0.0, high, n)
    y = rng.uniform(0.0, high, n)
    # Keep the exact equality cases in the corpus: symmetric points and zeros.
    kind = rng.integers(0, 20, n)
    y = np.where(kind == 0, x, y)
    y = np.where(kind == 1, 0.0, y)
    x = np.where(kind == 2, 0.0, x)
    return x, y


def _outcome(name: str, lhs, rhs, inputs: dict[str, np.ndarray]) -> FuzzOutcome:
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1.0)
    relative = (rhs - lhs) / scale
    bad = np.flatnonzero(relative < -RELATIVE_SLACK)
    examples = [
        {"proposition": name, **{k: float(v[i]) for k, v in inputs.items()},
         "lhs": float(lhs[i]), "rhs": float(rhs[i])}
        for i in bad
    ]
    return FuzzOutcome(name, len(lhs), len(bad), float(relative.min()), examples)


def fuzz_power_inequalities(n_cases: int = 100_000, seed: int = 0, high: float = 1e3) -> list[FuzzOutcome]:
    """Random inputs for every two-variable inequality, evaluated in one vector pass each."""
    if n_cases < 1:
        raise ValueError(f"n_cases must be >= 1, got {n_cases}")
    rng = np.random.default_rng(seed)
    out = []

    x, y = _fuzz_points(rng, n_cases, high)
    total = rng.uniform(0.0, 4.0, n_cases)
    p1 = rng.uniform(0.0, 0.5, n_cases) * total
    p2 = p1 + rng.uniform(0.0, 1.0, n_cases) * (0.5 * total - p1)
    q1, q2 = total - p1, total - p2
    lhs, rhs = muirhead_terms(x, y, p1, q1, p2, q2)
    out.append(_outcome("muirhead", lhs, rhs, dict(x=x, y=y, p1=p1, q1=q1, p2=p2, q2=q2)))

    x, y = _fuzz_points(rng, n_cases, high)
    k = rng.integers(1, 4, n_cases)
    q = rng.uniform(0.0, 1.0, n_cases)
    lhs, rhs = converse_super_terms(x, y, k, q)
    out.append(_outcome("converse_super", lhs, rhs, dict(x=x, y=y, k=k, q=q)))

    x, y = _fuzz_points(rng, n_cases, high)
    total = rng.uniform(0.5, 1.0, n_cases)
    p = total * rng.uniform(0.0, 1.0, n_cases)
    p = np.clip(p, 1e-9, total - 1e-9)
    lhs, rhs = converse_sub_terms(x, y, p, total - p)
    out.append(_outcome("converse_sub", lhs, rhs, dict(x=x, y=y, p=p, q=total - p)))

    x, y = _fuzz_points(rng, n_cases, high)
    p = rng.uniform(0.25, 0.5, n_cases)
    lhs, rhs = symmetric_sub_terms(x, y, p)
    out.append(_outcome("converse_sub_sqrt2", lhs, rhs, dict(x=x, y=y, p=p)))
    return out


def fuzz_summary_csv(outcomes: Sequence[FuzzOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["proposition", "cases", "violations", "worst_relative_slack"])
    for o in outcomes:
        writer.writerow([o.proposition, o.cases, o.violations, repr(o.worst_relative_slack)])
    return buf.getvalue()


def counterexamples_csv(outcomes: Sequence[FuzzOutcome]) -> str:
    """Full inputs of every violation, one row each, for replay."""
    rows = [row for o in outcomes for row in o.counterexamples]
    buf = io.StringIO()
    columns = ["proposition", "x", "y", "p1", "q1", "p2", "q2", "k", "p", "q", "lhs", "rhs"]
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Gaussian vectors and expectation backends

@dataclass(frozen=True, eq=False)
class GaussianVectorSpec:
    covariance: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        n = cov.shape[0]
        if not 1 <= n <= MAX_DIMENSION:
            raise ValueError(f"dimension must be in 1..{MAX_DIMENSION}, got {n}")
        if not np.all(np.isfinite(cov)) or not np.array_equal(cov, cov.T):
            raise ValueError("covariance must be finite and exactly symmetric")
        low = float(np.linalg.eigvalsh(cov).min())
        if low < -1e-12:
            raise ValueError(f"covariance is not PSD: smallest eigenvalue {low:.3e}")
        mean = np.zeros(n) if self.mean is None else np.array(self.mean, dtype=float)
        if mean.shape != (n,):
            raise ValueError(f"mean must have shape ({n},), got {mean.shape}")
        cov.flags.writeable = False
        mean.flags.writeable = False
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "mean", mean)

    @property
    def dimension(self) -> int:
        return self.covariance.shape[0]

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.covariance)

    def root(self) -> np.ndarray:
        """A matrix R with R R^T equal to the covariance; tolerates singular matrices."""
        vals, vecs = np.linalg.eigh(self.covariance)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class Expectation:
    value: float
    error: float
    method: str


def _quadrature(spec: GaussianVectorSpec, integrand: Callable, nodes: int) -> float:
    z, w = roots_hermite(nodes)
    n = spec.dimension
    grid = np.stack(np.meshgrid(*([z] * n), indexing="ij"), axis=-1).reshape(-1, n)
    weight = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    points = spec.mean + math.sqrt(2.0) * grid @ spec.root().T
    return math.fsum(weight * integrand(points)) / math.pi ** (n / 2)


def _quasi_mc(spec: GaussianVectorSpec, integrand: Callable, points: int, scrambles: int, seed: int):
    n = spec.dimension
    per = points // scrambles
    if per & (per - 1):
        raise ValueError("points per scramble must be a power of two")
    root = spec.root()
    means = np.empty(scrambles)
    for s in range(scrambles):
        sobol = stats.qmc.Sobol(d=n, scramble=True, seed=np.random.default_rng([seed, s]))
        u = sobol.random_base2(int(math.log2(per)))
        normals = stats.norm.ppf(np.clip(u, 1e-300, None))
        means[s] = math.fsum(integrand(spec.mean + normals @ root.T)) / per
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(scrambles))


def gaussian_expectation(
    spec: GaussianVectorSpec, integrand: Callable, method: str = "auto", seed: int = 0
) -> Expectation:
    """E[integrand(X)] for a vectorized integrand mapping (m, n) points to (m,) values."""
    if method == "auto":
        method = "quadrature" if spec.dimension <= QUADRATURE_MAX_DIMENSION else "quasi-MC"
    if method == "quadrature":
        if spec.dimension > QUADRATURE_MAX_DIMENSION:
            raise ValueError(f"tensor quadrature is limited to n <= {QUADRATURE_MAX_DIMENSION}")
        fine = _quadrature(spec, integrand, QUADRATURE_NODES)
        coarse = _quadrature(spec, integrand, QUADRATURE_NODES // 2)
        return Expectation(fine, abs(fine - coarse), method)
    if method == "quasi-MC":
        value, error = _quasi_mc(spec, integrand, QMC_POINTS, QMC_SCRAMBLES, seed)
        return Expectation(value, error, method)
    raise ValueError(f"method must be 'auto', 'quadrature' or 'quasi-MC', got {method!r}")


def _exp_moment_sum(spec: GaussianVectorSpec, weights: np.ndarray, power: int, coeff: float = 1.0) -> float:
    """E[(sum_i w_i exp(c X_i - c^2 var_i / 2))^power] by expanding into monomials."""
    cov = spec.covariance
    n = spec.dimension
    total = []
    for combo in itertools.product(range(n), repeat=power):
        w = math.prod(weights[i] for i in combo)
        if w == 0.0:
            continue
        exponent = coeff * sum(spec.mean[i] for i in combo)
        exponent += coeff**2 * sum(cov[a, b] for a, b in itertools.combinations(combo, 2))
        total.append(w * math.exp(exponent))
    return math.fsum(total)


def _as_weights(weights, n: int) -> np.ndarray:
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be {n} finite non-negative numbers")
    return w


# ---------------------------------------------------------------------------
# Slepian-type comparison

@dataclass(frozen=True)
class ExpLinear:
    """F(x) = exp(sum_i c_i x_i) with c >= 0; every mixed second derivative is >= 0."""

    coefficients: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not math.isfinite(c) or c < 0 for c in self.coefficients):
            raise ValueError("exponential-linear coefficients must be finite and >= 0")

    def positive_pairs(self, n: int) -> set[tuple[int, int]]:
        return {(i, j) for i in range(n) for j in range(n)}

    def evaluate(self, spec: GaussianVectorSpec, points: np.ndarray) -> np.ndarray:
        return np.exp(points @ np.asarray(self.coefficients))

    def closed_form(self, spec: GaussianVectorSpec) -> float:
        c = np.asarray(self.coefficients)
        return math.exp(float(c @ spec.mean + 0.5 * c @ spec.covariance @ c))


@dataclass(frozen=True)
class RenormalizedPowerProduct:
    """F(x) = prod_g (sum_{i in g} w_i exp(gamma x_i - gamma^2 var_i / 2))^(k_g).

    This is the shape of a cross moment of chaos masses over disjoint regions.
    With k_g > 0, mixed derivatives across groups are >= 0, while within a group
    they carry the sign of k_g (k_g - 1). Covariances inside groups must therefore
    agree between the two vectors, and only cross-group pairs may differ.
    """

    groups: tuple[tuple[int, ...], ...]
    exponents: tuple[float, ...]
    gamma: float = 1.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.groups) != len(self.exponents) or not self.groups:
            raise ValueError("need one exponent per non-empty group")
        flat = [i for g in self.groups for i in g]
        if len(set(flat)) != len(flat) or any(not g for g in self.groups):
            raise ValueError("groups must be non-empty and disjoint")
        if any(not k > 0 for k in self.exponents):
            raise ValueError("exponents must be positive; negative powers flip the derivative signs")

    def positive_pairs(self, n: int) -> set[tuple[int, int]]:
        label = {i: g for g, members in enumerate(self.groups) for i in members}
        return {(i, j) for i in label for j in label if label[i] != label[j]}

    def _weights(self, n: int) -> np.ndarray:
        return _as_weights(self.weights, n)

    def evaluate(self, spec: GaussianVectorSpec, points: np.ndarray) -> np.ndarray:
        w = self._weights(spec.dimension)
        g = self.gamma
        terms = w * np.exp(g * points - 0.5 * g * g * spec.variances)
        out = np.ones(points.shape[0])
        for members, k in zip(self.groups, self.exponents):
            out *= terms[:, list(members)].sum(axis=1) ** k
        return out

    def closed_form(self, spec: GaussianVectorSpec) -> float | None:
        if any(k != int(k) for k in self.exponents):
            return None
        w = self._weights(spec.dimension)
        factors = [list(members) for members, k in zip(self.groups, self.exponents) for _ in range(int(k))]
        if len(factors) > _MAX_CLOSED_POWER:
            return None
        g = self.gamma
        terms = []
        for combo in itertools.product(*factors):
            exponent = g * sum(spec.mean[i] for i in combo)
            exponent += g * g * sum(spec.covariance[a, b] for a, b in itertools.combinations(combo, 2))
            terms.append(math.prod(w[i] for i in combo) * math.exp(exponent))
        return math.fsum(terms)


SlepianFunctional = ExpLinear | RenormalizedPowerProduct


def _symmetric_pairs(pairs) -> set[tuple[int, int]]:
    out = set()
    for i, j in pairs or ():
        out.add((int(i), int(j)))
        out.add((int(j), int(i)))
    return out


def _check_domination(x: GaussianVectorSpec, y: GaussianVectorSpec, a: set, b: set, tol: float = 1e-12) -> None:
    n = x.dimension
    if y.dimension != n:
        raise ValueError("the two vectors must have the same dimension")
    for i in range(n):
        for j in range(n):
            diff = y.covariance[i, j] - x.covariance[i, j]
            if (i, j) not in b and diff < -tol:
                raise ValueError(f"Y does not dominate X at ({i}, {j}), which is outside B")
            if (i, j) not in a and diff > tol:
                raise ValueError(f"X does not dominate Y at ({i}, {j}), which is outside A")


def functional_expectation(functional, spec: GaussianVectorSpec, method: str = "auto", seed: int = 0) -> Expectation:
    """E[F(X)] for a comparison functional; closed form whenever one exists."""
    if method in ("auto", "closed-form"):
        value = functional.closed_form(spec)
        if value is not None:
            return Expectation(value, 0.0, "closed-form")
        if method == "closed-form":
            raise ValueError(f"no closed form for {functional!r}")
        method = "auto"
    return gaussian_expectation(spec, lambda pts: functional.evaluate(spec, pts), method, seed)


def _comparison(lo: Expectation, hi: Expectation) -> ComparisonResult:
    method = hi.method if lo.method == "closed-form" else lo.method
    numeric = ERROR_MULTIPLE * (lo.error + hi.error)
    exact = RELATIVE_SLACK * max(abs(lo.value), abs(hi.value), 1.0)
    return _result(lo.value, hi.value, hi.value - lo.value, method, max(numeric, exact))


def slepian_verify(
    x: GaussianVectorSpec,
    y: GaussianVectorSpec,
    a_pairs,
    b_pairs,
    functional: SlepianFunctional,
    method: str = "auto",
    seed: int = 0,
) -> ComparisonResult:
    """E[F(X)] <= E[F(Y)] when Y dominates X off B, X dominates Y off A, and F has
    non-negative mixed derivatives on A and non-positive ones on B."""
    if not isinstance(functional, (ExpLinear, RenormalizedPowerProduct)):
        raise TypeError(f"functional {functional!r} is not in the supported family")
    n = x.dimension
    a = _symmetric_pairs(a_pairs)
    b = _symmetric_pairs(b_pairs)
    if b:
        raise ValueError("supported functionals have no non-positive mixed derivatives, so B must be empty")
    outside = a - functional.positive_pairs(n)
    if outside:
        raise ValueError(f"pairs {sorted(outside)} in A lack a non-negative mixed derivative for {functional!r}")
    if any(i >= n or j >= n for i, j in a):
        raise ValueError("index pair out of range")
    _check_domination(x, y, a, b)
    if isinstance(functional, ExpLinear) and len(functional.coefficients) != n:
        raise ValueError(f"need {n} coefficients, got {len(functional.coefficients)}")
    return _comparison(functional_expectation(functional, x, method, seed), functional_expectation(functional, y, method, seed))


# ---------------------------------------------------------------------------
# Kahane-type comparison

@dataclass(frozen=True)
class Power:
    """t^p, convex on t > 0 for p >= 1 or p <= 0."""

    p: float

    def __post_init__(self) -> None:
        if 0 < self.p < 1:
            raise ValueError(
                f"t^{self.p} is concave for 0 < p < 1; the comparison reverses and is not "
                "flipped automatically"
            )

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return t**self.p


@dataclass(frozen=True)
class Exponential:
    """exp(c t) with c <= 0; for c > 0 the expectation of a lognormal sum is infinite."""

    c: float

    def __post_init__(self) -> None:
        if self.c > 0:
            raise ValueError(f"exp({self.c} t) has infinite expectation for lognormal t; need c <= 0")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return np.exp(self.c * t)


@dataclass(frozen=True)
class Hinge:
    """max(t - a, 0)."""

    a: float

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return np.maximum(t - self.a, 0.0)


ConvexFunctional = Power | Exponential | Hinge


def _kahane_closed_form(functional, spec: GaussianVectorSpec, weights: np.ndarray) -> float | None:
    if isinstance(functional, Power) and functional.p == int(functional.p):
        p = int(functional.p)
        if p == 0:
            return 1.0
        if 1 <= p <= _MAX_CLOSED_POWER:
            return _exp_moment_sum(spec, weights, p)
    if isinstance(functional, Exponential) and functional.c == 0:
        return 1.0
    return None


def kahane_expectation(
    spec: GaussianVectorSpec, weights, functional: ConvexFunctional, method: str = "auto", seed: int = 0
) -> Expectation:
    """E[F(sum_i w_i exp(X_i - var_i / 2))]."""
    w = _as_weights(weights, spec.dimension)
    if method in ("auto", "closed-form"):
        value = _kahane_closed_form(functional, spec, w)
        if value is not None:
            return Expectation(value, 0.0, "closed-form")
        if method == "closed-form":
            raise ValueError(f"no closed form for {functional!r}")
    half_var = 0.5 * spec.variances

    def integrand(points: np.ndarray) -> np.ndarray:
        return functional(np.exp(points - half_var) @ w)

    return gaussian_expectation(spec, integrand, method, seed)


def kahane_verify(
    x: GaussianVectorSpec,
    y: GaussianVectorSpec,
    weights,
    functional: ConvexFunctional,
    method: str = "auto",
    seed: int = 0,
) -> ComparisonResult:
    """E[F(sum w_i e^(X_i - var/2))] <= same with Y, when cov_Y >= cov_X entrywise and F is convex."""
    if not isinstance(functional, (Power, Exponential, Hinge)):
        raise TypeError(f"functional {functional!r} is not in the supported convex family")
    n = x.dimension
    every = {(i, j) for i in range(n) for j in range(n)}
    _check_domination(x, y, every, set())
    lo = kahane_expectation(x, weights, functional, method, seed)
    hi = kahane_expectation(y, weights, functional, method, seed)
    return _comparison(lo, hi)


def kahane_shift_constant(R: float, gamma: float, p: float) -> float:
    """E[(exp(gamma sqrt(R) N - gamma^2 R / 2))^p] for a standard normal N."""
    if not R >= 0:
        raise ValueError(f"R must be >= 0, got {R}")
    return math.exp(gamma**2 * R * p * (p - 1) / 2)


def random_covariance(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """A random PSD matrix with unit-order entries, exactly symmetric."""
    a = rng.normal(size=(n, n)) * math.sqrt(scale / n)
    cov = a @ a.T
    return 0.5 * (cov + cov.T)


def raise_entry(cov: np.ndarray, i: int, j: int, amount: float) -> np.ndarray | None:
    """cov with entry (i, j) and (j, i) raised by ``amount``, halving the step until
    the result stays PSD. None if no step above amount / 2^20 works."""
    if i == j:
        raise ValueError("use an off-diagonal entry")
    for _ in range(21):
        new = cov.copy()
        new[i, j] += amount
        new[j, i] += amount
        if np.linalg.eigvalsh(new).min() >= -1e-12:
            return new
        amount /= 2
    return None


def kahane_monotonicity_check(n_perturbations: int = 100, seed: int = 0, dimension: int = 3) -> list[ComparisonResult]:
    """Closed-form second moment before and after raising one off-diagonal covariance entry."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_perturbations:
        cov = random_covariance(rng, dimension) + 0.5 * np.eye(dimension)
        i, j = rng.choice(dimension, size=2, replace=False)
        raised = raise_entry(cov, int(i), int(j), float(rng.uniform(0.01, 0.5)))
        if raised is None:
            continue
        weights = rng.uniform(0.1, 2.0, dimension)
        out.append(
            kahane_verify(GaussianVectorSpec(cov), GaussianVectorSpec(raised), weights, Power(2), "closed-form")
        )
    return out
