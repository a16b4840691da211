"""Hyperbolically weighted chaos masses of grid-aligned regions, in the log domain.

A cell contributes w_i * exp(gamma X_i - gamma^2 sigma_i^2 / 2), where w_i is
the exact integral of y^(-gamma^2/2) over the cell. For gamma >= sqrt(2) that
integral diverges at y = 0, so cells touching the boundary are integrated from
eps/2 instead.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .geometry import UHPRect
from .kernel import FactorizedCovariance, GridDiscretization
from .sampler import FieldSample, field_variances, iter_value_blocks

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GmcParams:
    gamma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and 0 < self.gamma < 2):
            raise ValueError(f"gamma must lie in the open interval (0, 2), got {self.gamma}")

    @property
    def weight_exponent(self) -> float:
        return self.gamma**2 / 2


@dataclass(frozen=True)
class MassResult:
    log_mass: float
    region: UHPRect
    params: GmcParams
    replicate_id: int
    epsilon: float = float("nan")
    region_id: int = 0


def _floor_integral(y0: float, y1: float, gamma: float) -> float:
    # Integral of y^(-a) over [y0, y1], a = gamma^2 / 2, stable near a = 1.
    c = 1.0 - gamma**2 / 2
    if y0 == 0.0:
        if c <= 0.0:
            raise ValueError(
                f"weight integral diverges at y=0 for gamma={gamma!r} >= sqrt(2); "
                "the cell must start above the boundary"
            )
        return y1**c / c
    log_ratio = math.log(y1 / y0)
    if c == 0.0:
        return log_ratio
    return y0**c * math.expm1(c * log_ratio) / c


def cell_weight(cell: UHPRect, gamma: float) -> float:
    """Exact integral of Im(z)^(-gamma^2/2) over the cell."""
    GmcParams(gamma)
    return cell.width * _floor_integral(cell.y0, cell.y1, gamma)


def weight_floor(grid: GridDiscretization, gamma: float) -> float:
    """Lowest height integrated: 0, or eps/2 when the boundary weight is not integrable."""
    if grid.row_offset == 0 and gamma >= _SQRT2:
        return 0.5 * grid.cell_size
    return 0.0


def grid_log_weights(grid: GridDiscretization, gamma: float) -> np.ndarray:
    """log w_i per cell, shape (n_x, n_y); identical across columns."""
    rows = grid.row_edges()
    floor = weight_floor(grid, gamma)
    row_w = np.array(
        [
            grid.cell_size * _floor_integral(max(lo, floor), hi, gamma)
            for lo, hi in zip(rows[:-1], rows[1:])
        ]
    )
    return np.broadcast_to(np.log(row_w), (grid.n_x, grid.n_y))


class RegionMasses:
    """Log masses of several aligned regions, evaluated batch-wise on one grid."""

    def __init__(
        self,
        grid: GridDiscretization,
        variances: np.ndarray,
        regions: Sequence[UHPRect],
        params: GmcParams,
    ) -> None:
        if not regions:
            raise ValueError("need at least one region")
        self.grid = grid
        self.params = params
        self.regions = list(regions)
        self.slices = [grid.index_range(r) for r in self.regions]
        gamma = params.gamma
        variances = np.asarray(variances).reshape(grid.n_x, grid.n_y)
        self.base = grid_log_weights(grid, gamma) - 0.5 * gamma**2 * variances

    def log_weight_sums(self) -> np.ndarray:
        return np.array([logsumexp(self.base[sx, sy]) for sx, sy in self.slices])

    def __call__(self, values: np.ndarray, shift: np.ndarray | None = None) -> np.ndarray:
        """values: (B, n_cells) field samples; shift: optional (B, n_cells) added to
        the exponent. Returns log masses of shape (n_regions, B)."""
        g = self.grid
        batch = values.shape[0]
        terms = self.base[None] + self.params.gamma * values.reshape(batch, g.n_x, g.n_y)
        if shift is not None:
            terms = terms + shift.reshape(batch, g.n_x, g.n_y)
        out = np.empty((len(self.regions), batch))
        for k, (sx, sy) in enumerate(self.slices):
            out[k] = logsumexp(terms[:, sx, sy].reshape(batch, -1), axis=1)
        return out


def gmc_masses_multi(
    field: FieldSample, regions: Sequence[UHPRect], params: GmcParams
) -> list[MassResult]:
    evaluator = RegionMasses(field.grid, field.variances, regions, params)
    logs = evaluator(field.values[None, :])[:, 0]
    return [
        MassResult(float(v), r, params, field.replicate_id, field.grid.cell_size, k)
        for k, (v, r) in enumerate(zip(logs, regions))
    ]


def gmc_log_mass(field: FieldSample, region: UHPRect, params: GmcParams) -> MassResult:
    return gmc_masses_multi(field, [region], params)[0]


def simulate_log_masses(
    fac: FactorizedCovariance,
    regions: Sequence[UHPRect],
    params: GmcParams,
    seed: int,
    count: int,
    first_id: int = 0,
    workers: int = 1,
    noise: str = "gaussian",
) -> np.ndarray:
    """Coupled log masses of ``regions`` for replicates first_id .. first_id+count-1,
    shape (n_regions, count)."""
    evaluator = RegionMasses(fac.grid, field_variances(fac, noise), regions, params)
    out = np.empty((len(regions), count))
    for ids, values in iter_value_blocks(fac, seed, first_id, count, workers, noise):
        out[:, ids - first_id] = evaluator(values)
    return out


def mass_rows_to_csv(results: Iterable[MassResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replicate_id", "region_id", "gamma", "epsilon", "log_mass"])
    for m in results:
        writer.writerow([m.replicate_id, m.region_id, repr(m.params.gamma), repr(m.epsilon), repr(m.log_mass)])
    return buf.getvalue()
