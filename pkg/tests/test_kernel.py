import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmclab.geometry import UHPRect, carleson
from gmclab.kernel import (
    CovarianceSpec,
    GridTooLargeError,
    KernelNotPSDError,
    assemble_covariance,
    build_grid,
    cell_pair_log_kernel,
    factorize,
    kernel_value,
    lag_table,
    shift_distortion,
    validate_psd_shift,
)

coords = st.floats(-5, 5, allow_nan=False)
heights = st.floats(0, 5, allow_nan=False)


def test_kernel_value_examples():
    spec = CovarianceSpec(1e-3)
    assert kernel_value((0, 1), (0, 1), spec) == pytest.approx(-math.log(1e-3) - math.log(2), abs=1e-12)
    assert kernel_value((0, 1), (0, 1), spec) == pytest.approx(6.2146, abs=1e-4)
    expected = -math.log(0.3) - math.log(math.sqrt(1.09))
    assert kernel_value((0, 0.5), (0.3, 0.5), spec) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.1609, abs=1e-4)
    assert kernel_value((0, 0.5), (0.3, 0.5), CovarianceSpec(1e-3, 0.7)) == pytest.approx(expected + 0.7)


@given(coords, heights, coords, heights, st.floats(1e-6, 1))
def test_kernel_value_symmetric(zx, zy, wx, wy, eps):
    spec = CovarianceSpec(eps)
    assert kernel_value((zx, zy), (wx, wy), spec) == kernel_value((wx, wy), (zx, zy), spec)


def test_kernel_value_rejects_non_finite():
    with pytest.raises(ValueError):
        kernel_value((math.nan, 1), (0, 1), CovarianceSpec(0.1))


@pytest.mark.parametrize("eps,lam", [(0, 0), (-1, 0), (0.1, -1), (0.1, math.inf)])
def test_covariance_spec_validation(eps, lam):
    with pytest.raises(ValueError):
        CovarianceSpec(eps, lam)


def test_cell_average_matches_quadrature():
    # Midpoint rule on a 40^4 product grid; the singular diagonal case converges slowly.
    u = (np.arange(40) + 0.5) / 40
    for dx, dy in [(1, 0), (2, 3), (0, 5)]:
        x1, y1, x2, y2 = np.meshgrid(u, u, u, u, indexing="ij", sparse=True)
        dist = np.hypot(dx + x1 - x2, dy + y1 - y2)
        assert float(cell_pair_log_kernel(dx, dy)) == pytest.approx(float(-np.log(dist).mean()), abs=2e-4)


def test_cell_average_near_far_switch_is_continuous():
    below = cell_pair_log_kernel(8.0, 3.0)
    above = cell_pair_log_kernel(np.nextafter(8.0, 9.0), 3.0)
    assert abs(float(below - above)) < 1e-10


@given(st.floats(0, 40), st.floats(0, 40))
def test_cell_average_is_even(dx, dy):
    base = cell_pair_log_kernel(dx, dy)
    for sx, sy in [(-1, 1), (1, -1), (-1, -1)]:
        assert cell_pair_log_kernel(sx * dx, sy * dy) == base


def test_build_grid_examples():
    g = build_grid(UHPRect(0, 1, 0, 1), 0.25)
    assert g.n_cells == 16
    assert np.all(g.centers[g.centers[:, 1] < 0.25][:, 1] == 0.125)
    assert build_grid(UHPRect(-1, 1, 0, 1), 1 / 8).n_cells == 128
    with pytest.raises(ValueError, match="exceeds"):
        build_grid(UHPRect(0, 1, 0, 0.5), 1.0)
    with pytest.raises(ValueError, match="divide"):
        build_grid(UHPRect(0, 1, 0, 1), 0.3)
    with pytest.raises(GridTooLargeError, match="GiB"):
        build_grid(UHPRect(0, 1, 0, 1), 1 / 256)


def test_grid_cells_and_index_ranges():
    g = build_grid(UHPRect(-1, 1, 0.5, 1.5), 0.25)
    assert g.row_offset == 2
    assert g.cell(0) == UHPRect(-1, -0.75, 0.5, 0.75)
    assert g.cell(g.n_y) == UHPRect(-0.75, -0.5, 0.5, 0.75)
    sx, sy = g.index_range(UHPRect(-0.5, 0.5, 0.75, 1.25))
    assert (sx, sy) == (slice(2, 6), slice(1, 3))
    with pytest.raises(ValueError, match="x0"):
        g.index_range(UHPRect(-0.6, 0.5, 0.75, 1.25))
    with pytest.raises(ValueError, match="inside"):
        g.index_range(UHPRect(-0.5, 0.5, 0.0, 1.25))


def test_covariance_is_bitwise_symmetric():
    g = build_grid(UHPRect(-0.5, 0.5, 0, 0.5), 1 / 16)
    cov = assemble_covariance(g, CovarianceSpec(1 / 16))
    assert np.array_equal(cov, cov.T)


def test_lag_table_spacing_must_match_grid():
    g = build_grid(UHPRect(0, 1, 0, 1), 0.25)
    with pytest.raises(ValueError, match="differs"):
        lag_table(g, CovarianceSpec(0.5))


def test_off_diagonal_entries_close_to_pointwise_kernel_far_apart():
    eps = 1 / 16
    g = build_grid(UHPRect(-1, 1, 0, 1), eps)
    cov = assemble_covariance(g, CovarianceSpec(eps))
    centers = g.centers
    i, j = 5, g.n_cells - 7
    pointwise = kernel_value(centers[i], centers[j], CovarianceSpec(eps))
    assert cov[i, j] == pytest.approx(pointwise, abs=1e-3)


def test_scaling_identity_across_resolutions():
    # Shrinking region and spacing by r shifts every entry by exactly -2 ln r.
    region = UHPRect(-0.5, 0.5, 0, 0.5)
    r = 0.5
    big = assemble_covariance(build_grid(region, 1 / 8), CovarianceSpec(1 / 8))
    small = assemble_covariance(build_grid(region.scaled(r), r / 8), CovarianceSpec(r / 8))
    assert np.allclose(small - big, -2 * math.log(r), rtol=0, atol=1e-12)


def test_diagonal_grows_like_log_inverse_spacing():
    # Same cell position in relative units: the diagonal shifts by ln(eps_coarse / eps_fine) per kernel term.
    region = UHPRect(-0.5, 0.5, 0, 0.5)
    coarse = assemble_covariance(build_grid(region, 1 / 8), CovarianceSpec(1 / 8))
    fine_grid = build_grid(region.scaled(0.5), 1 / 16)
    fine = assemble_covariance(fine_grid, CovarianceSpec(1 / 16))
    assert np.allclose(np.diag(fine) - np.diag(coarse), 2 * math.log(2), atol=1e-12)


def test_one_cell_factor():
    g = build_grid(UHPRect(0, 0.25, 0, 0.25), 0.25)
    spec = CovarianceSpec(0.25)
    fac = factorize(g, spec)
    sigma2 = assemble_covariance(g, spec)[0, 0]
    assert fac.lower_factor.shape == (1, 1)
    assert fac.lower_factor[0, 0] == pytest.approx(math.sqrt(sigma2), rel=1e-15)
    assert fac.diag_variances[0] == sigma2


def test_two_cell_factor_matches_hand_cholesky():
    g = build_grid(UHPRect(0, 0.5, 0, 0.25), 0.25)
    spec = CovarianceSpec(0.25, 1.0)
    cov = assemble_covariance(g, spec)
    s1, s2, k12 = cov[0, 0], cov[1, 1], cov[0, 1]
    l11 = math.sqrt(s1)
    l21 = k12 / l11
    l22 = math.sqrt(s2 - l21**2)
    fac = factorize(g, spec, "dense")
    assert np.allclose(fac.lower_factor, [[l11, 0], [l21, l22]], rtol=1e-14)


def test_regression_fixture_is_psd_without_jitter():
    g = build_grid(UHPRect(-0.2, 0.2, 0, 0.4), 0.05)
    fac = factorize(g, CovarianceSpec(0.05))
    assert fac.jitter_used == 0
    assert fac.min_pivot > 0
    cov = assemble_covariance(g, CovarianceSpec(0.05))
    recon = fac.lower_factor @ fac.lower_factor.T
    assert np.linalg.norm(recon - cov) <= 1e-8 * np.linalg.norm(cov)


@pytest.mark.parametrize("region,eps,lam", [
    (UHPRect(-0.5, 0.5, 0, 0.5), 1 / 16, 0.0),
    (carleson(-1, 1).rect(), 1 / 8, 1.5),
    (UHPRect(-1, 1, 0.5, 1.0), 1 / 8, 1.5),
])
def test_spectral_factor_reproduces_dense_covariance(region, eps, lam):
    g = build_grid(region, eps)
    spec = CovarianceSpec(eps, lam)
    dense = assemble_covariance(g, spec)
    fac = factorize(g, spec, "spectral")
    assert fac.jitter_used == 0
    implied = fac.implied_covariance()
    assert np.linalg.norm(implied - dense) <= 1e-8 * np.linalg.norm(dense)


def test_covariance_column_matches_matrix():
    g = build_grid(UHPRect(-0.5, 0.5, 0, 0.5), 1 / 8)
    spec = CovarianceSpec(1 / 8)
    cov = assemble_covariance(g, spec)
    fac = factorize(g, spec)
    for i in (0, 9, g.n_cells - 1):
        assert np.array_equal(fac.covariance_column(i), cov[i])


def test_indefinite_domain_rejected():
    g = build_grid(UHPRect(-8, 8, 0, 2), 1.0)
    with pytest.raises(KernelNotPSDError, match="raise lambda"):
        factorize(g, CovarianceSpec(1.0))
    with pytest.raises(KernelNotPSDError):
        validate_psd_shift(g, [0.0])


def test_validate_psd_shift():
    g = build_grid(UHPRect(-0.5, 0.5, 0, 0.5), 1 / 8)
    assert validate_psd_shift(g, [0.0, 1.0]).lambda_shift == 0.0
    big = build_grid(carleson(-1, 1).rect(), 1 / 8)
    choice = validate_psd_shift(big, [0.0, 1.0, 1.5, 2.0], gamma=1.0, p=0.8)
    assert choice.lambda_shift == 1.5
    assert choice.distortion == pytest.approx(shift_distortion(1.5, 1.0, 0.8))
    with pytest.raises(ValueError, match="ascending"):
        validate_psd_shift(g, [1.0, 0.0])
    with pytest.raises(ValueError):
        validate_psd_shift(g, [])


def test_shift_distortion_value():
    assert shift_distortion(math.log(2), 1.0, 2.0) == 2.0
    assert shift_distortion(3.0, 1.2, 1.0) == 1.0


def test_factor_cache_round_trip(tmp_path):
    g = build_grid(UHPRect(-0.5, 0.5, 0, 0.5), 1 / 8)
    spec = CovarianceSpec(1 / 8)
    first = factorize(g, spec, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    again = factorize(g, spec, cache_dir=tmp_path)
    assert np.array_equal(first.lower_factor, again.lower_factor)
    assert np.array_equal(first.diag_variances, again.diag_variances)


def test_cache_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("GMC_LAB_CACHE", str(tmp_path))
    g = build_grid(UHPRect(0, 0.5, 0, 0.5), 1 / 8)
    factorize(g, CovarianceSpec(1 / 8))
    assert len(list(tmp_path.glob("*.npz"))) == 1
