"""Covariance of the regularized boundary log-correlated field on a grid.

The continuum kernel is K(z, w) = -ln|z - w| - ln|z - conj(w)| + lambda. On a
grid of square cells of side eps the field value of a cell is its cell average,
so the covariance between two cells is the double average of K over the pair
of cells. That average has a closed form (``cell_pair_log_kernel``), it keeps
the matrix positive definite on moderate domains, and it scales exactly: the
grid of r*A at spacing r*eps has covariance K_A - 2 ln r.

Two factorizations are provided. ``dense`` is a plain Cholesky factor.
``spectral`` uses that the covariance only depends on the horizontal lag, so a
circulant embedding in x (odd period) block-diagonalizes it into one small
Cholesky factor per frequency.
"""

from __future__ import annotations

import functools
import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.linalg

from .geometry import UHPRect

DEFAULT_MAX_CELLS = 16384
JITTER_LADDER = (1e-12, 1e-10, 1e-8, 1e-6)
CACHE_ENV = "GMC_LAB_CACHE"
# Cell offsets beyond this use the multipole expansion; the closed form loses
# digits to cancellation further out, the expansion is below 1e-13 error here.
_NEAR_FIELD = 8.0
_AUTO_DENSE_MAX = 2048


class KernelNotPSDError(ValueError):
    pass


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceSpec:
    epsilon: float
    lambda_shift: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (math.isfinite(self.lambda_shift) and self.lambda_shift >= 0):
            raise ValueError(f"lambda_shift must be finite and >= 0, got {self.lambda_shift}")


def kernel_value(z: Sequence[float], w: Sequence[float], spec: CovarianceSpec) -> float:
    """Pointwise clamped kernel -ln max(|z-w|, eps) - ln max(|z-conj w|, eps) + lambda."""
    zx, zy = float(z[0]), float(z[1])
    wx, wy = float(w[0]), float(w[1])
    if not all(math.isfinite(v) for v in (zx, zy, wx, wy)):
        raise ValueError(f"non-finite point in kernel_value: {z}, {w}")
    eps = spec.epsilon
    direct = math.hypot(zx - wx, zy - wy)
    mirrored = math.hypot(zx - wx, zy + wy)
    return -math.log(max(direct, eps)) - math.log(max(mirrored, eps)) + spec.lambda_shift


def _g4(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Fourth antiderivative of ln(x^2 + y^2), two in each variable.
    r2 = x * x + y * y
    # Tiny x against large y overflows the ratio; arctan(inf) is the right limit.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_r2 = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
        t1 = np.where(x > 0, x**3 * y * np.arctan(y / np.where(x > 0, x, 1.0)), 0.0)
        t2 = np.where(y > 0, x * y**3 * np.arctan(x / np.where(y > 0, y, 1.0)), 0.0)
    return (
        -(x**4 + y**4) / 24 * log_r2
        + x * x * y * y / 4 * log_r2
        + (t1 + t2) / 3
        - 25.0 / 24.0 * x * x * y * y
    )


def _near_average(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    total = np.zeros(np.broadcast(a, b).shape)
    stencil = ((-1, 1.0), (0, -2.0), (1, 1.0))
    for di, ci in stencil:
        for dj, cj in stencil:
            total = total + ci * cj * _g4(np.abs(a + di), np.abs(b + dj))
    return -0.5 * total


def _far_average(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a + 1j * b
    return -(np.log(np.abs(d)) + np.real(d**-4.0) / 120 - np.real(d**-8.0) / 360)


def cell_pair_log_kernel(dx, dy) -> np.ndarray:
    """-E ln|(dx, dy) + U - V| for U, V uniform on the unit square.

    This is the average of -ln|z - w| over two unit cells whose lower-left
    corners differ by (dx, dy). Even in both arguments, bitwise.
    """
    a, b = np.broadcast_arrays(np.abs(np.asarray(dx, float)), np.abs(np.asarray(dy, float)))
    out = np.empty(a.shape)
    near = np.maximum(a, b) <= _NEAR_FIELD
    out[near] = _near_average(a[near], b[near])
    out[~near] = _far_average(a[~near], b[~near])
    return out


@dataclass(frozen=True)
class GridDiscretization:
    """Square cells of side ``cell_size`` tiling ``region``.

    Cells are numbered x-major: index = ix * n_y + iy, with iy counted from the
    bottom row. ``row_offset`` is region.y0 in cell units.
    """

    region: UHPRect
    cell_size: float
    n_x: int
    n_y: int
    row_offset: int

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y

    def column_edges(self) -> np.ndarray:
        return self.region.x0 + self.cell_size * np.arange(self.n_x + 1)

    def row_edges(self) -> np.ndarray:
        return self.cell_size * (self.row_offset + np.arange(self.n_y + 1))

    @property
    def centers(self) -> np.ndarray:
        xs = self.region.x0 + self.cell_size * (np.arange(self.n_x) + 0.5)
        ys = self.cell_size * (self.row_offset + np.arange(self.n_y) + 0.5)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell(self, index: int) -> UHPRect:
        ix, iy = divmod(index, self.n_y)
        h = self.cell_size
        x0 = self.region.x0 + ix * h
        y0 = (self.row_offset + iy) * h
        return UHPRect(x0, x0 + h, y0, y0 + h)

    def index_range(self, rect: UHPRect, tol: float = 1e-9) -> tuple[slice, slice]:
        """Column and row slices of the cells making up ``rect``.

        Edges must sit on cell boundaries to within ``tol`` cells.
        """
        h = self.cell_size
        edges = {
            "x0": (rect.x0 - self.region.x0) / h,
            "x1": (rect.x1 - self.region.x0) / h,
            "y0": rect.y0 / h - self.row_offset,
            "y1": rect.y1 / h - self.row_offset,
        }
        snapped = {}
        for name, value in edges.items():
            k = round(value)
            if abs(value - k) > tol:
                coord = getattr(rect, name)
                raise ValueError(
                    f"region edge {name}={coord!r} is not on the grid of spacing {h!r} "
                    f"(off by {abs(value - k):.3g} cells)"
                )
            snapped[name] = k
        if snapped["x0"] < 0 or snapped["x1"] > self.n_x or snapped["y0"] < 0 or snapped["y1"] > self.n_y:
            raise ValueError(f"region {rect} is not inside the grid region {self.region}")
        return slice(snapped["x0"], snapped["x1"]), slice(snapped["y0"], snapped["y1"])


def _cells_along(length: float, epsilon: float, what: str) -> int:
    n = length / epsilon
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ValueError(f"epsilon={epsilon!r} does not divide the region {what} {length!r}")
    return int(k)


def build_grid(region: UHPRect, epsilon: float, max_cells: int = DEFAULT_MAX_CELLS) -> GridDiscretization:
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if epsilon > min(region.width, region.height):
        raise ValueError(
            f"epsilon={epsilon!r} exceeds the region size "
            f"{region.width!r} x {region.height!r}"
        )
    n_x = _cells_along(region.width, epsilon, "width")
    n_y = _cells_along(region.height, epsilon, "height")
    offset = region.y0 / epsilon
    row_offset = round(offset)
    if abs(offset - row_offset) > 1e-9 * max(1.0, offset):
        raise ValueError(f"region bottom y0={region.y0!r} is not a multiple of epsilon={epsilon!r}")
    n_cells = n_x * n_y
    if n_cells > max_cells:
        dense_bytes = 2 * 8 * n_cells**2
        raise GridTooLargeError(
            f"grid has {n_cells} cells ({n_x} x {n_y}), above the cap of {max_cells}; "
            f"a dense covariance and its factor would need {dense_bytes / 2**30:.1f} GiB"
        )
    return GridDiscretization(region, float(epsilon), n_x, n_y, int(row_offset))


@functools.lru_cache(maxsize=2)
def _unshifted_lags(grid: GridDiscretization, n_lags: int) -> np.ndarray:
    lags = np.arange(n_lags, dtype=float)[:, None, None]
    rows = np.arange(grid.n_y)
    gap = np.abs(rows[:, None] - rows[None, :]).astype(float)[None]
    mirror = (rows[:, None] + rows[None, :] + 2 * grid.row_offset + 1).astype(float)[None]
    table = cell_pair_log_kernel(lags, gap) + cell_pair_log_kernel(lags, mirror)
    table.flags.writeable = False
    return table


def lag_table(grid: GridDiscretization, spec: CovarianceSpec, n_lags: int | None = None) -> np.ndarray:
    """Covariance blocks T[l, j, j'] between a cell in row j and one in row j'
    whose columns differ by l."""
    if spec.epsilon != grid.cell_size:
        raise ValueError(f"spec epsilon {spec.epsilon!r} differs from grid spacing {grid.cell_size!r}")
    n_lags = grid.n_x if n_lags is None else n_lags
    const = -2.0 * math.log(grid.cell_size) + spec.lambda_shift
    return const + _unshifted_lags(grid, n_lags)


def assemble_covariance(grid: GridDiscretization, spec: CovarianceSpec) -> np.ndarray:
    table = lag_table(grid, spec)
    ix, iy = np.divmod(np.arange(grid.n_cells), grid.n_y)
    return table[np.abs(ix[:, None] - ix[None, :]), iy[:, None], iy[None, :]]


def _odd_smooth_at_least(n: int) -> int:
    m = n if n % 2 else n + 1
    while True:
        k = m
        for p in (3, 5, 7):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 2


@dataclass(frozen=True, eq=False)
class FactorizedCovariance:
    """A square root of the grid covariance.

    ``lower_factor`` is the dense Cholesky factor for method ``dense`` and the
    stack of per-frequency Cholesky factors for ``spectral``.
    ``diag_variances`` includes any jitter, so it is the exact variance of the
    sampled field.
    """

    grid: GridDiscretization
    spec: CovarianceSpec
    method: str
    lower_factor: np.ndarray
    lags: np.ndarray
    diag_variances: np.ndarray
    jitter_used: float
    min_pivot: float
    period: int = 0

    @property
    def n_normals(self) -> int:
        if self.method == "dense":
            return self.grid.n_cells
        return 2 * self.lower_factor.shape[0] * self.grid.n_y

    def correlate(self, normals: np.ndarray) -> np.ndarray:
        """Map standard normals of shape (B, n_normals) to field values (B, n_cells)."""
        normals = np.asarray(normals, dtype=float)
        if self.method == "dense":
            return normals @ self.lower_factor.T
        g = self.grid
        n_freq = self.lower_factor.shape[0]
        batch = normals.shape[0]
        parts = np.ascontiguousarray(normals.reshape(batch, 2, n_freq, g.n_y).transpose(1, 2, 3, 0))
        real = self.lower_factor @ parts[0]
        imag = self.lower_factor @ parts[1]
        m = self.period
        spectrum = np.empty((g.n_y, batch, n_freq), dtype=complex)
        spectrum[..., 0] = math.sqrt(m) * real[0]
        spectrum[..., 1:] = (math.sqrt(m / 2) * (real[1:] - 1j * imag[1:])).transpose(1, 2, 0)
        field = scipy.fft.irfft(spectrum, n=m, axis=-1)[..., : g.n_x]
        return np.ascontiguousarray(field.transpose(1, 2, 0)).reshape(batch, g.n_cells)

    def covariance_column(self, index: int) -> np.ndarray:
        """Row ``index`` of the covariance matrix, without jitter."""
        ix, iy = divmod(index, self.grid.n_y)
        cols = np.abs(np.arange(self.grid.n_x) - ix)
        return self.lags[cols, :, iy].ravel()

    def implied_covariance(self) -> np.ndarray:
        """Covariance actually realized by ``correlate``; small grids only."""
        root = self.correlate(np.eye(self.n_normals))
        return root.T @ root


def _cholesky_with_jitter(matrix: np.ndarray, scale: float):
    """Cholesky factor of ``matrix`` (or of a batch), escalating diagonal jitter."""
    eye = np.eye(matrix.shape[-1])
    for jitter in (0.0, *JITTER_LADDER):
        try:
            shifted = matrix + jitter * scale * eye if jitter else matrix
            if matrix.ndim == 2:
                factor = scipy.linalg.cholesky(shifted, lower=True, check_finite=False)
            else:
                factor = np.linalg.cholesky(shifted)
            return factor, jitter * scale
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            continue
    return None, None


def _not_psd(grid: GridDiscretization, spec: CovarianceSpec) -> KernelNotPSDError:
    return KernelNotPSDError(
        f"kernel not PSD on this domain; shrink region or raise lambda "
        f"(region {grid.region}, eps={spec.epsilon!r}, lambda={spec.lambda_shift!r})"
    )


def _factorize_dense(grid: GridDiscretization, spec: CovarianceSpec) -> FactorizedCovariance:
    table = lag_table(grid, spec)
    cov = assemble_covariance(grid, spec)
    diag = np.diagonal(cov).copy()
    if np.any(diag <= 0):
        raise _not_psd(grid, spec)
    factor, jitter = _cholesky_with_jitter(cov, float(diag.max()))
    if factor is None:
        raise _not_psd(grid, spec)
    return FactorizedCovariance(
        grid, spec, "dense", factor, table, diag + jitter, jitter,
        float(np.min(np.diagonal(factor)) ** 2),
    )


def _factorize_spectral(grid: GridDiscretization, spec: CovarianceSpec) -> FactorizedCovariance:
    table = lag_table(grid, spec)
    diag = np.tile(np.diagonal(table[0]), grid.n_x)
    if np.any(diag <= 0):
        raise _not_psd(grid, spec)
    # Odd periods keep every frequency block positive on the domains used here;
    # even periods leave a negative Nyquist block.
    for period in dict.fromkeys((_odd_smooth_at_least(2 * grid.n_x - 1), 2 * grid.n_x - 1)):
        half = period // 2
        full = lag_table(grid, spec, half + 1)
        wrapped = np.concatenate([full, full[1:][::-1]])
        blocks = scipy.fft.rfft(wrapped, axis=0).real
        factor, jitter = _cholesky_with_jitter(blocks, float(diag.max()))
        if factor is not None:
            pivots = np.diagonal(factor, axis1=1, axis2=2)
            return FactorizedCovariance(
                grid, spec, "spectral", factor, table, diag + jitter, jitter,
                float(np.min(pivots) ** 2), period,
            )
    raise _not_psd(grid, spec)


def _cache_path(cache_dir: Path, grid: GridDiscretization, spec: CovarianceSpec, method: str) -> Path:
    key = repr((grid.region.as_row(), grid.cell_size, spec.lambda_shift, method)).encode()
    return cache_dir / f"factor-{hashlib.sha256(key).hexdigest()[:20]}.npz"


def factorize(
    grid: GridDiscretization,
    spec: CovarianceSpec,
    method: str = "auto",
    cache_dir: str | os.PathLike | None = None,
) -> FactorizedCovariance:
    """Factor the grid covariance; ``method`` is ``dense``, ``spectral`` or ``auto``.

    ``cache_dir`` (or the GMC_LAB_CACHE environment variable) stores factors
    on disk keyed by region, spacing, shift and method.
    """
    if method == "auto":
        method = "dense" if grid.n_cells <= _AUTO_DENSE_MAX else "spectral"
    if method not in ("dense", "spectral"):
        raise ValueError(f"unknown factorization method {method!r}")
    cache_dir = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    path = _cache_path(Path(cache_dir), grid, spec, method) if cache_dir else None
    if path is not None and path.exists():
        with np.load(path) as data:
            return FactorizedCovariance(
                grid, spec, method, data["factor"], data["lags"], data["diag"],
                float(data["jitter"]), float(data["min_pivot"]), int(data["period"]),
            )
    fac = _factorize_dense(grid, spec) if method == "dense" else _factorize_spectral(grid, spec)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(
            tmp, factor=fac.lower_factor, lags=fac.lags, diag=fac.diag_variances,
            jitter=fac.jitter_used, min_pivot=fac.min_pivot, period=fac.period,
        )
        os.replace(tmp, path)
    return fac


def shift_distortion(lambda_shift: float, gamma: float, p: float) -> float:
    """Bound on how much a constant covariance shift changes a p-th moment."""
    return math.exp(gamma**2 * lambda_shift * p * (p - 1) / 2)


@dataclass(frozen=True)
class ShiftChoice:
    lambda_shift: float
    distortion: float
    factor: FactorizedCovariance


def validate_psd_shift(
    grid: GridDiscretization,
    lambda_candidates: Sequence[float],
    gamma: float = 1.0,
    p: float = 1.0,
    method: str = "auto",
) -> ShiftChoice:
    """Smallest candidate shift whose covariance factorizes without jitter."""
    candidates = list(lambda_candidates)
    if not candidates:
        raise ValueError("need at least one lambda candidate")
    if any(b < a for a, b in zip(candidates, candidates[1:])):
        raise ValueError("lambda candidates must be ascending")
    for lam in candidates:
        spec = CovarianceSpec(grid.cell_size, lam)
        try:
            fac = factorize(grid, spec, method)
        except KernelNotPSDError:
            continue
        if fac.jitter_used == 0.0:
            return ShiftChoice(lam, shift_distortion(lam, gamma, p), fac)
    raise KernelNotPSDError(
        f"no lambda in {candidates} makes the kernel PSD on region {grid.region} "
        f"at eps={grid.cell_size!r}"
    )
