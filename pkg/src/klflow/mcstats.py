"""Seeded Monte Carlo estimation with a reproducible parallel reduction.

Draws are grouped in fixed-size blocks. Block ``b`` of a run keyed by
``seed`` gets its own Philox stream derived from ``SeedSequence(seed,
spawn_key=(b,))``, so the standard normals of draw ``i`` depend only on
``(seed, i)``. Each block is reduced to an :class:`Estimator`; block
estimators are merged pairwise in block order, which makes the final numbers
independent of how many workers evaluated the blocks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 4096


class NonFiniteSampleError(ValueError):
    """A Monte Carlo statistic produced NaN or infinity."""


class Estimator:
    """Streaming mean and second central moment (Welford / Chan et al.)."""

    def __init__(self, shape: tuple = ()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    @property
    def shape(self) -> tuple:
        return self.mean.shape

    def accumulate(self, value) -> "Estimator":
        value = np.asarray(value, dtype=float)
        if value.shape != self.shape:
            raise ValueError(f"value shape {value.shape} does not match estimator {self.shape}")
        if not np.all(np.isfinite(value)):
            raise NonFiniteSampleError(f"non-finite sample after {self.count} draws")
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (value - self.mean)
        return self

    def accumulate_batch(self, values) -> "Estimator":
        """Fold a batch (leading axis = draws) in one step."""
        values = np.asarray(values, dtype=float)
        if values.shape[1:] != self.shape:
            raise ValueError(f"batch shape {values.shape[1:]} does not match estimator {self.shape}")
        if values.shape[0] == 0:
            return self
        if not np.all(np.isfinite(values)):
            raise NonFiniteSampleError(f"non-finite sample in batch after {self.count} draws")
        other = Estimator(self.shape)
        other.count = values.shape[0]
        other.mean = values.mean(axis=0)
        other.m2 = np.sum((values - other.mean) ** 2, axis=0)
        merged = merge(self, other)
        self.count, self.mean, self.m2 = merged.count, merged.mean, merged.m2
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full(self.shape, np.nan)
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> np.ndarray:
        """``sqrt(m2 / (n (n - 1)))``; NaN while fewer than two values are seen."""
        if self.count < 2:
            return np.full(self.shape, np.nan)
        return np.sqrt(self.m2 / (self.count * (self.count - 1)))

    def summary(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(),
                "standard_error": self.standard_error.tolist()}

    def __repr__(self) -> str:
        return f"Estimator(count={self.count}, shape={self.shape})"


def merge(a: Estimator, b: Estimator) -> Estimator:
    if a.shape != b.shape:
        raise ValueError(f"cannot merge estimators of shapes {a.shape} and {b.shape}")
    out = Estimator(a.shape)
    if a.count == 0:
        out.count, out.mean, out.m2 = b.count, b.mean.copy(), b.m2.copy()
        return out
    if b.count == 0:
        out.count, out.mean, out.m2 = a.count, a.mean.copy(), a.m2.copy()
        return out
    n = a.count + b.count
    delta = b.mean - a.mean
    out.count = n
    out.mean = a.mean + delta * (b.count / n)
    out.m2 = a.m2 + b.m2 + delta**2 * (a.count * b.count / n)
    return out


def tree_merge(parts: Sequence[Estimator]) -> Estimator:
    """Pairwise merge in a fixed binary tree over the list order."""
    if not parts:
        raise ValueError("nothing to merge")
    level = list(parts)
    while len(level) > 1:
        nxt = [merge(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def block_normals(seed: int, block: int, n_modes: int, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Standard normals for one block, shape ``(block_size, n_modes)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((block_size, n_modes))


def standard_normals(seed: int, draws: int, n_modes: int, start: int = 0,
                     block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Normals for draws ``start .. start + draws - 1`` of a seeded stream."""
    out = np.empty((draws, n_modes))
    i = start
    while i < start + draws:
        b, off = divmod(i, block_size)
        take = min(block_size - off, start + draws - i)
        out[i - start:i - start + take] = block_normals(seed, b, n_modes, block_size)[off:off + take]
        i += take
    return out


def default_workers() -> int:
    return os.cpu_count() or 1


def run(statistic: Callable[[np.ndarray], np.ndarray], seed: int, draws: int, n_modes: int,
        workers: int | None = None, block_size: int = BLOCK_SIZE) -> Estimator:
    """Estimate ``E[statistic(xi)]`` over ``draws`` seeded standard-normal vectors.

    ``statistic`` maps a ``(k, n_modes)`` array of normals to a ``(k, ...)``
    array of per-draw values. The result is bit-identical for any ``workers``.
    """
    if draws < 1:
        raise ValueError("draws must be positive")
    n_blocks = math.ceil(draws / block_size)

    def one(b: int) -> Estimator:
        xi = block_normals(seed, b, n_modes, block_size)[:min(block_size, draws - b * block_size)]
        vals = np.asarray(statistic(xi), dtype=float)
        est = Estimator(vals.shape[1:])
        return est.accumulate_batch(vals)

    workers = workers or default_workers()
    if workers == 1 or n_blocks == 1:
        parts = [one(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_blocks)))
    return tree_merge(parts)


def z_score(estimate, expected, standard_error) -> np.ndarray:
    """``|estimate - expected| / SE`` with zero-SE entries compared exactly."""
    estimate, expected, se = (np.asarray(v, dtype=float) for v in (estimate, expected, standard_error))
    diff = np.abs(estimate - expected)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff <= 1e-12, 0.0, np.inf))
    return z
