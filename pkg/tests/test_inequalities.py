import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gmclab.inequalities import (
    ERROR_MULTIPLE,
    ComparisonResult,
    Exponential,
    ExpLinear,
    GaussianVectorSpec,
    Hinge,
    Power,
    RenormalizedPowerProduct,
    check_converse_sub,
    check_converse_sub_symmetric,
    check_converse_super,
    check_muirhead,
    counterexamples_csv,
    functional_expectation,
    fuzz_power_inequalities,
    fuzz_summary_csv,
    gaussian_expectation,
    kahane_expectation,
    kahane_monotonicity_check,
    kahane_shift_constant,
    kahane_verify,
    raise_entry,
    slepian_verify,
    super_constant,
)

nonneg = st.floats(0, 1e3, allow_nan=False)
IDENT = GaussianVectorSpec(np.eye(2))
CORR = GaussianVectorSpec(np.array([[1.0, 0.5], [0.5, 1.0]]))


def assert_tight(result: ComparisonResult):
    assert result.holds
    assert abs(result.slack) <= 1e-12 * max(abs(result.lhs), abs(result.rhs), 1.0)


# Two-variable inequalities


def test_muirhead_example():
    r = check_muirhead(4, 1, 0, 2, 1, 1)
    assert (r.lhs, r.rhs) == (8.0, 17.0)
    assert r.slack == 9.0 and r.holds and r.method == "closed-form"


def test_muirhead_equality_cases():
    assert check_muirhead(3.7, 3.7, 0.2, 1.8, 0.7, 1.3).slack == 0.0
    assert check_muirhead(2.0, 9.0, 0.5, 1.5, 0.5, 1.5).slack == 0.0


@pytest.mark.parametrize("args", [
    (1, 1, 0, 2, 0.5, 1),      # sums differ
    (1, 1, 0.5, 1.5, 0, 2),    # second pair more spread
    (1, 1, 1.5, 0.5, 1, 1),    # p1 > q1
    (-1, 1, 0, 2, 1, 1),       # negative x
])
def test_muirhead_preconditions(args):
    with pytest.raises(ValueError):
        check_muirhead(*args)


def test_converse_super_examples():
    r = check_converse_super(1, 1, 1, 1)
    assert (r.lhs, r.rhs, r.slack) == (4.0, 4.0, 0.0)
    assert super_constant(1) == 1 and super_constant(3) == 7
    assert_tight(check_converse_super(5.5, 0, 2, 0.3))
    with pytest.raises(ValueError):
        check_converse_super(1, 1, 1.5, 0.5)
    with pytest.raises(ValueError):
        check_converse_super(1, 1, 0, 0.5)
    with pytest.raises(ValueError):
        check_converse_super(1, 1, 1, 1.5)


def test_converse_sub_examples():
    r = check_converse_sub(1, 1, 0.25, 0.25)
    assert r.lhs == pytest.approx(-2.0, abs=1e-15)
    assert r.rhs == pytest.approx(math.sqrt(2), abs=1e-15)
    assert r.holds
    assert_tight(check_converse_sub(7.0, 0.0, 0.3, 0.4))
    with pytest.raises(ValueError):
        check_converse_sub(1, 1, 0.1, 0.2)
    with pytest.raises(ValueError):
        check_converse_sub(1, 1, 0.0, 0.6)


def test_symmetric_sub_constant():
    # At x = y the sharper constant is attained exactly when p = 1/2.
    r = check_converse_sub_symmetric(1, 1, 0.5)
    assert r.lhs == 2.0 and r.rhs == pytest.approx(2 + math.sqrt(2))
    assert_tight(check_converse_sub_symmetric(0, 4, 0.3))
    with pytest.raises(ValueError):
        check_converse_sub_symmetric(1, 1, 0.6)


@given(nonneg, nonneg, st.floats(0, 4), st.floats(0, 1), st.floats(0, 1))
def test_muirhead_property(x, y, total, a, b):
    p1 = 0.5 * total * a
    p2 = p1 + b * (0.5 * total - p1)
    assume(p2 <= total - p2)
    assert check_muirhead(x, y, p1, total - p1, p2, total - p2).holds


@given(nonneg, nonneg, st.integers(1, 3), st.floats(0, 1))
def test_converse_super_property(x, y, k, q):
    assert check_converse_super(x, y, k, q).holds


@given(nonneg, nonneg, st.floats(0.5, 1), st.floats(0.01, 0.99))
def test_converse_sub_property(x, y, total, share):
    assert check_converse_sub(x, y, total * share, total * (1 - share)).holds


@given(nonneg, nonneg, st.floats(0.25, 0.5))
def test_symmetric_sub_property(x, y, p):
    assert check_converse_sub_symmetric(x, y, p).holds


@given(nonneg, st.floats(0.1, 3))
def test_symmetric_points_are_exact(x, total):
    assert check_muirhead(x, x, 0, total, total / 2, total / 2).slack >= 0
    assert_tight(check_muirhead(x, x, total / 3, 2 * total / 3, total / 3, 2 * total / 3))


def test_fuzz_all_propositions():
    outcomes = fuzz_power_inequalities(100_000, seed=0)
    assert [o.proposition for o in outcomes] == ["muirhead", "converse_super", "converse_sub", "converse_sub_sqrt2"]
    for o in outcomes:
        assert o.cases == 100_000
        assert o.passed, o.counterexamples[:3]
        assert o.worst_relative_slack >= -1e-12
    assert fuzz_summary_csv(outcomes).splitlines()[0] == "proposition,cases,violations,worst_relative_slack"
    assert counterexamples_csv(outcomes).splitlines()[1:] == []


def test_fuzz_hits_equality_cases():
    # Symmetric and zero inputs make about a tenth of the corpus; their slack is exactly 0.
    (muirhead, *_rest) = fuzz_power_inequalities(2000, seed=1)
    assert muirhead.worst_relative_slack == 0.0 or muirhead.worst_relative_slack > -1e-12


# Gaussian vectors


def test_gaussian_spec_validation():
    with pytest.raises(ValueError, match="symmetric"):
        GaussianVectorSpec(np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(ValueError, match="PSD"):
        GaussianVectorSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="dimension"):
        GaussianVectorSpec(np.eye(7))
    with pytest.raises(ValueError, match="mean"):
        GaussianVectorSpec(np.eye(2), mean=[0.0])
    spec = GaussianVectorSpec(np.array([[1.0, 1.0], [1.0, 1.0]]))
    root = spec.root()
    assert np.allclose(root @ root.T, spec.covariance)


@pytest.mark.parametrize("method", ["quadrature", "quasi-MC"])
def test_numeric_backends_match_mgf(method):
    cov = np.array([[1.0, 0.3, 0.1], [0.3, 0.8, 0.2], [0.1, 0.2, 0.5]])
    spec = GaussianVectorSpec(cov, mean=[0.1, -0.2, 0.3])
    c = np.array([0.5, 0.2, 0.7])
    exact = math.exp(c @ spec.mean + 0.5 * c @ cov @ c)
    got = gaussian_expectation(spec, lambda pts: np.exp(pts @ c), method)
    assert got.method == method
    assert abs(got.value - exact) <= max(ERROR_MULTIPLE * got.error, 1e-12 * exact)


def test_quadrature_limited_to_three_dimensions():
    with pytest.raises(ValueError):
        gaussian_expectation(GaussianVectorSpec(np.eye(4)), lambda p: p[:, 0], "quadrature")
    with pytest.raises(ValueError):
        gaussian_expectation(IDENT, lambda p: p[:, 0], "simpson")


# Slepian-type comparison


def test_slepian_exp_linear_example():
    r = slepian_verify(IDENT, CORR, [(0, 1)], [], ExpLinear((1.0, 1.0)))
    assert r.method == "closed-form"
    assert r.lhs == pytest.approx(math.e, rel=1e-15)
    assert r.rhs == pytest.approx(math.exp(1.5), rel=1e-15)
    assert r.holds


@pytest.mark.parametrize("method", ["quadrature", "quasi-MC"])
def test_slepian_numeric_matches_closed_form(method):
    f = ExpLinear((1.0, 1.0))
    for spec, exact in [(IDENT, math.e), (CORR, math.exp(1.5))]:
        got = functional_expectation(f, spec, method)
        assert got.method == method
        assert abs(got.value - exact) <= ERROR_MULTIPLE * got.error
    assert slepian_verify(IDENT, CORR, [(0, 1)], [], f, method=method).holds


@pytest.mark.parametrize("functional", [
    ExpLinear((0.5, 1.0, 0.0)),
    RenormalizedPowerProduct(((0,), (1, 2)), (1, 2), gamma=0.8),
    RenormalizedPowerProduct(((0, 1), (2,)), (0.4, 0.6), gamma=1.2),
])
@pytest.mark.parametrize("method", ["auto", "quadrature", "quasi-MC"])
def test_slepian_equal_laws(functional, method):
    spec = GaussianVectorSpec(np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]]))
    r = slepian_verify(spec, spec, [], [], functional, method=method)
    assert r.holds
    err = r.tolerance / ERROR_MULTIPLE if r.method != "closed-form" else 1e-12 * abs(r.rhs)
    assert abs(r.slack) <= ERROR_MULTIPLE * err


def test_slepian_boost_factor():
    # Common boost sqrt(R) N on both coordinates against independent boosts.
    delta = 0.5
    R = -2 * math.log(delta)
    coupled = GaussianVectorSpec(np.array([[1 + R, R], [R, 1 + R]]))
    split = GaussianVectorSpec(np.diag([1 + R, 1 + R]))
    f = RenormalizedPowerProduct(((0,), (1,)), (1, 1))
    r = slepian_verify(split, coupled, [(0, 1)], [], f)
    assert r.rhs / r.lhs == pytest.approx(delta**-2, rel=1e-14)
    assert r.rhs / r.lhs == pytest.approx(math.exp(2 * 1 * 1 * 1 * -math.log(delta)), rel=1e-14)


def test_slepian_preconditions():
    with pytest.raises(ValueError, match="B must be empty"):
        slepian_verify(IDENT, CORR, [(0, 1)], [(0, 1)], ExpLinear((1.0, 1.0)))
    with pytest.raises(ValueError, match="dominate"):
        slepian_verify(CORR, IDENT, [(0, 1)], [], ExpLinear((1.0, 1.0)))
    with pytest.raises(ValueError, match="outside A"):
        slepian_verify(IDENT, CORR, [], [], ExpLinear((1.0, 1.0)))
    same_group = RenormalizedPowerProduct(((0, 1),), (2,))
    with pytest.raises(ValueError, match="lack"):
        slepian_verify(IDENT, CORR, [(0, 1)], [], same_group)
    with pytest.raises(TypeError):
        slepian_verify(IDENT, CORR, [(0, 1)], [], Power(2))
    with pytest.raises(ValueError):
        ExpLinear((-1.0, 1.0))
    with pytest.raises(ValueError):
        RenormalizedPowerProduct(((0,), (0,)), (1, 1))


def test_power_product_closed_form_matches_quasi_mc():
    spec = GaussianVectorSpec(np.array([[1.0, 0.4, 0.1], [0.4, 0.7, 0.3], [0.1, 0.3, 0.9]]))
    f = RenormalizedPowerProduct(((0, 1), (2,)), (2, 1), gamma=0.9, weights=(0.5, 1.5, 1.0))
    exact = functional_expectation(f, spec)
    qmc = functional_expectation(f, spec, "quasi-MC")
    assert exact.method == "closed-form"
    assert abs(exact.value - qmc.value) <= ERROR_MULTIPLE * qmc.error


# Kahane-type comparison


def test_kahane_second_moment_closed_form():
    w = np.array([1.0, 1.0])
    r = kahane_verify(IDENT, CORR, w, Power(2))
    assert r.method == "closed-form"
    assert r.lhs == pytest.approx(sum(math.exp(c) for c in IDENT.covariance.ravel()), rel=1e-14)
    assert r.rhs == pytest.approx(sum(math.exp(c) for c in CORR.covariance.ravel()), rel=1e-14)
    assert r.holds


def test_kahane_closed_form_agrees_with_quasi_mc():
    spec = GaussianVectorSpec(np.array([[0.6, 0.2], [0.2, 0.4]]))
    w = [0.7, 1.3]
    exact = kahane_expectation(spec, w, Power(2))
    qmc = kahane_expectation(spec, w, Power(2), "quasi-MC")
    assert abs(exact.value - qmc.value) <= ERROR_MULTIPLE * qmc.error


def test_kahane_inverse_power_by_quasi_mc():
    r = kahane_verify(IDENT, CORR, [1.0, 1.0], Power(-1), method="quasi-MC")
    assert r.method == "quasi-MC"
    assert r.holds


@pytest.mark.parametrize("functional", [Power(2), Power(3), Power(-1), Power(1.5), Exponential(-0.5), Hinge(1.5)])
@pytest.mark.parametrize("method", ["auto", "quadrature", "quasi-MC"])
def test_kahane_equal_laws(functional, method):
    r = kahane_verify(CORR, CORR, [0.5, 1.5], functional, method=method)
    assert r.holds
    assert abs(r.slack) <= r.tolerance


@pytest.mark.parametrize("functional", [Power(-1), Power(1.5), Exponential(-1.0), Hinge(2.0)])
def test_kahane_holds_for_convex_family(functional):
    x = GaussianVectorSpec(np.array([[0.5, 0.1], [0.1, 0.5]]))
    y = GaussianVectorSpec(np.array([[0.8, 0.4], [0.4, 0.6]]))
    assert kahane_verify(x, y, [1.0, 2.0], functional).holds


def test_kahane_preconditions():
    with pytest.raises(ValueError, match="concave"):
        Power(0.5)
    with pytest.raises(ValueError):
        Exponential(0.1)
    with pytest.raises(ValueError, match="dominate"):
        kahane_verify(CORR, IDENT, [1, 1], Power(2))
    with pytest.raises(ValueError, match="weights"):
        kahane_verify(IDENT, CORR, [1, -1], Power(2))
    with pytest.raises(TypeError):
        kahane_verify(IDENT, CORR, [1, 1], ExpLinear((1.0, 1.0)))


def test_kahane_shift_constant():
    assert kahane_shift_constant(0.0, 1.3, 2.7) == 1.0
    assert kahane_shift_constant(math.log(2), 1.0, 2.0) == 2.0
    assert kahane_shift_constant(5.0, 1.7, 1.0) == 1.0
    with pytest.raises(ValueError):
        kahane_shift_constant(-1.0, 1.0, 2.0)


@given(st.floats(0, 5), st.floats(0.1, 1.9), st.floats(-2, 3))
def test_kahane_shift_constant_is_lognormal_moment(R, gamma, p):
    assert kahane_shift_constant(R, gamma, p) == pytest.approx(
        math.exp(0.5 * (gamma * p) ** 2 * R - 0.5 * p * gamma**2 * R), rel=1e-12
    )


def test_monotonicity_under_raised_entries():
    results = kahane_monotonicity_check(100, seed=0)
    assert len(results) == 100
    assert all(r.holds and r.slack >= 0 for r in results)


def test_raise_entry_keeps_psd():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    raised = raise_entry(cov, 0, 1, 0.5)
    assert raised[0, 1] == raised[1, 0] and raised[0, 1] > 0.9
    assert np.linalg.eigvalsh(raised).min() >= -1e-12
    with pytest.raises(ValueError):
        raise_entry(cov, 0, 0, 0.1)
