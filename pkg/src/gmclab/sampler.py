"""Reproducible field sampling.

Each replicate owns a Philox stream keyed by (seed, replicate_id), so a
replicate's normals never depend on which worker drew them or in what order.
Replicates are correlated in fixed canonical blocks of ``BLOCK`` ids; ids that
were not requested are zero-filled, so the floating point path for any id is
the same whether it is sampled alone or in a batch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .kernel import FactorizedCovariance, GridDiscretization

BLOCK = 32
NOISE_KINDS = ("gaussian", "zero")
_U64 = 1 << 64


def _key(seed: int, replicate_id: int) -> int:
    if not (0 <= seed < _U64 and 0 <= replicate_id < _U64):
        raise ValueError(f"seed and replicate_id must be unsigned 64-bit, got {seed}, {replicate_id}")
    return seed | (replicate_id << 64)


def replicate_normals(seed: int, replicate_id: int, n: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(key=_key(seed, replicate_id))).standard_normal(n)


def replicate_uniforms(seed: int, replicate_id: int, n: int) -> np.ndarray:
    """Uniforms from a counter range disjoint from the replicate's normals."""
    bitgen = np.random.Philox(key=_key(seed, replicate_id), counter=[0, 0, 0, 1])
    return np.random.Generator(bitgen).random(n)


@dataclass(frozen=True, eq=False)
class FieldSample:
    grid: GridDiscretization
    values: np.ndarray
    variances: np.ndarray
    seed: int
    replicate_id: int


def field_variances(fac: FactorizedCovariance, noise: str) -> np.ndarray:
    """Per-cell variance of the sampled field; the zero field has none."""
    if noise == "zero":
        return np.zeros_like(fac.diag_variances)
    return fac.diag_variances


def _block_values(
    fac: FactorizedCovariance, seed: int, block: int, wanted: range, noise: str
) -> np.ndarray:
    """Field values for the canonical block, rows for ids outside ``wanted`` left as zeros."""
    normals = np.zeros((BLOCK, fac.n_normals))
    if noise == "gaussian":
        for offset in range(BLOCK):
            rid = block * BLOCK + offset
            if rid in wanted:
                normals[offset] = replicate_normals(seed, rid, fac.n_normals)
    elif noise != "zero":
        raise ValueError(f"noise must be one of {NOISE_KINDS}, got {noise!r}")
    return fac.correlate(normals)


def iter_value_blocks(
    fac: FactorizedCovariance,
    seed: int,
    first_id: int,
    count: int,
    workers: int = 1,
    noise: str = "gaussian",
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (replicate_ids, values) in increasing id order; values has shape (len(ids), n_cells)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    wanted = range(first_id, first_id + count)
    blocks = range(first_id // BLOCK, (first_id + count - 1) // BLOCK + 1)

    def run(block: int) -> tuple[np.ndarray, np.ndarray]:
        ids = np.arange(block * BLOCK, (block + 1) * BLOCK)
        keep = (ids >= wanted.start) & (ids < wanted.stop)
        values = _block_values(fac, seed, block, wanted, noise)
        return ids[keep], values[keep]

    if workers == 1:
        yield from map(run, blocks)
        return
    # Bounded look-ahead keeps memory flat on long runs.
    window = 4 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(blocks), window):
            yield from pool.map(run, blocks[start : start + window])


def sample_field(
    fac: FactorizedCovariance, seed: int, replicate_id: int, noise: str = "gaussian"
) -> FieldSample:
    (_, values), = iter_value_blocks(fac, seed, replicate_id, 1, noise=noise)
    return FieldSample(fac.grid, values[0], field_variances(fac, noise), seed, replicate_id)


def sample_batch(
    fac: FactorizedCovariance,
    seed: int,
    first_id: int,
    count: int,
    workers: int = 1,
    noise: str = "gaussian",
) -> Iterator[FieldSample]:
    variances = field_variances(fac, noise)
    for ids, values in iter_value_blocks(fac, seed, first_id, count, workers, noise):
        for rid, row in zip(ids, values):
            yield FieldSample(fac.grid, row, variances, seed, int(rid))
