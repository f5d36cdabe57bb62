"""
Deterministic, seeded simulation of Brownian-type paths on a uniform grid.

Generator (fixed; changing it changes every published number):
  * bits: numpy Philox4x64 counter-based bit generator seeded with
    SeedSequence(seed), read with random_raw();
  * uniforms: u = ((bits >> 11) + 0.5) * 2**-53, strictly inside (0, 1);
  * normals: Z = ndtri(u), the inverse standard normal CDF from scipy.special;
  * path: x_i = x0 + sigma*W_i + mu*t_i, with the unit path W_0 = 0,
    W_{i+1} = W_i + sqrt(dt)*Z_i. Scaling W last makes a sigma=c path exactly
    c times the sigma=1 path from the same seed.

Path j of an ensemble uses the derived seed mix(seed, j), the first 64-bit word
of SeedSequence(seed, spawn_key=(j,)). Ensemble output is therefore independent
of generation order and of the number of worker threads.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, TypeVar

import numpy as np
from scipy.special import ndtri

from .errors import ArgumentError
from .paths import Path, TimeGrid

logger = logging.getLogger(__name__)

T = TypeVar("T")

KINDS = ("brownian", "drifted_brownian", "scaled_brownian")
GENERATOR_NAME = "philox4x64+ndtri"
MAX_SEED = 2**64 - 1
_INV_2_53 = 2.0**-53


@dataclass(frozen=True)
class SimSpec:
    """
    brownian: unit volatility, no drift. scaled_brownian: volatility sigma.
    drifted_brownian: volatility sigma and drift mu.
    """

    kind: str = "brownian"
    x0: float = 0.0
    sigma: float = 1.0
    mu: float = 0.0
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(1.0, 1000))
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown kind {self.kind!r}; choose from {', '.join(KINDS)}")
        for name in ("x0", "sigma", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ArgumentError(f"{name} must be finite")
        if self.sigma < 0.0:
            raise ArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == "brownian" and self.sigma != 1.0:
            raise ArgumentError("kind 'brownian' has unit volatility; use scaled_brownian for sigma != 1")
        if self.kind != "drifted_brownian" and self.mu != 0.0:
            raise ArgumentError(f"drift is only allowed for drifted_brownian, got mu={self.mu}")
        check_seed(self.seed)

    def with_seed(self, seed: int) -> "SimSpec":
        return SimSpec(self.kind, self.x0, self.sigma, self.mu, self.grid, seed)


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed <= MAX_SEED:
        raise ArgumentError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return int(seed)


def mix(seed: int, index: int) -> int:
    """Derived seed of ensemble member `index`."""
    state = np.random.SeedSequence(check_seed(seed), spawn_key=(int(index),)).generate_state(1, np.uint64)
    return int(state[0])


def standard_normals(seed: int, count: int) -> np.ndarray:
    """`count` standard normal draws from the documented generator."""
    bit_generator = np.random.Philox(np.random.SeedSequence(check_seed(seed)))
    bits = np.asarray(bit_generator.random_raw(count), dtype=np.uint64)
    uniforms = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
    return ndtri(uniforms)


def simulate_path(spec: SimSpec) -> Path:
    grid = spec.grid
    z = standard_normals(spec.seed, grid.steps)
    unit = np.empty(grid.steps + 1, dtype=np.float64)
    unit[0] = 0.0
    np.cumsum(math.sqrt(grid.dt) * z, out=unit[1:])
    values = spec.sigma * unit
    if spec.mu != 0.0:
        values = values + spec.mu * grid.times()
    if spec.x0 != 0.0:
        values = values + spec.x0
    return Path(grid, values)


def ensemble_member(spec: SimSpec, index: int) -> Path:
    return simulate_path(spec.with_seed(mix(spec.seed, index)))


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise ArgumentError(f"threads must be >= 1, got {threads}")
    return int(threads)


def map_ensemble(
    spec: SimSpec, n_paths: int, fn: Callable[[Path], T], threads: Optional[int] = None
) -> list[T]:
    """
    fn(path_j) for j = 0..n_paths-1, in index order. Paths are generated inside
    the workers and dropped once fn returns.
    """
    if n_paths < 1:
        raise ArgumentError(f"n_paths must be >= 1, got {n_paths}")
    workers = resolve_threads(threads)
    logger.info(
        "ensemble: %d %s paths, N=%d, T=%g, seed=%d, threads=%d",
        n_paths, spec.kind, spec.grid.steps, spec.grid.horizon, spec.seed, workers,
    )

    def task(index: int) -> T:
        return fn(ensemble_member(spec, index))

    if workers == 1:
        return [task(j) for j in range(n_paths)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(n_paths)))


def simulate_ensemble(spec: SimSpec, n_paths: int, threads: Optional[int] = None) -> list[Path]:
    return map_ensemble(spec, n_paths, lambda path: path, threads)


def iter_ensemble(
    spec: SimSpec, n_paths: int, threads: Optional[int] = None, chunk: int = 256
) -> Iterator[Path]:
    """Lazily yield ensemble members in index order, `chunk` paths at a time."""
    if n_paths < 1:
        raise ArgumentError(f"n_paths must be >= 1, got {n_paths}")
    workers = resolve_threads(threads)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, n_paths, chunk):
            stop = min(start + chunk, n_paths)
            yield from pool.map(lambda j: ensemble_member(spec, j), range(start, stop))
