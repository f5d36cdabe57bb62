"""
Pathwise quadratic variation, left-point Itô sums, local-time fields and the
Stieltjes integrators used by the Meyer-Tanaka terms.

A LocalTimeField stores only the increments

    dL[j, k] = c/eps * 1{|x_j - y_k| <= eps} * (x_{j+1} - x_j)^2

as a scipy.sparse CSR matrix; L[j][k] = sum of dL[i, k] for i < j. The band
indicator is evaluated at the left end of each increment (or at its midpoint
with evaluation="midpoint"). With c = 1/4 the field follows the 1/(4 eps)
convention under which <x>_t = 2 ∫ L(t, y) dy.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path as FilePath
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from .errors import ArgumentError, ConventionError, LengthMismatchError
from .paths import Path

logger = logging.getLogger(__name__)

# Band reach of the level grid beyond the path range, in units of eps.
GRID_MARGIN = 3.0
LEVEL_RTOL = 1e-9

LevelFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Convention(Enum):
    QUARTER = 0.25
    HALF = 0.5

    @classmethod
    def parse(cls, value) -> "Convention":
        if isinstance(value, Convention):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                pass
        else:
            for member in cls:
                if value == member.value:
                    return member
        raise ArgumentError(f"unknown convention {value!r}; use 'quarter' or 'half'")

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class QVProcess:
    values: np.ndarray

    @property
    def total(self) -> float:
        return float(self.values[-1])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def qv_process(path: Path) -> QVProcess:
    """q_j = sum of (x_{i+1} - x_i)^2 over i < j."""
    values = np.concatenate([[0.0], np.cumsum(np.diff(path.values) ** 2)])
    values.setflags(write=False)
    return QVProcess(values)


def ito_integral(g: Sequence[float], path: Path) -> float:
    """Left-point sum Σ g_j (x_{j+1} - x_j); g holds one value per grid interval."""
    g = np.asarray(g, dtype=np.float64)
    dx = np.diff(path.values)
    if g.shape != dx.shape:
        raise LengthMismatchError(f"integrand has {g.size} values for {dx.size} increments")
    return float(np.dot(g, dx))


def default_epsilon(steps: int) -> float:
    """eps = max(0.02, 0.6 * N^(-1/4))."""
    return max(0.02, 0.6 * steps**-0.25)


def default_dy(epsilon: float) -> float:
    return 0.5 * epsilon


@dataclass(frozen=True)
class LevelGrid:
    """
    Levels y_k = anchor + (first + k) * step, k = 0..count-1. The anchor is
    reproduced bit-exactly whenever it lies inside the grid.
    """

    anchor: float
    step: float
    count: int
    first: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ArgumentError("level grid is empty")
        if not (self.step > 0.0 and math.isfinite(self.step)):
            raise ArgumentError(f"level spacing must be finite and > 0, got {self.step}")

    @cached_property
    def values(self) -> np.ndarray:
        offsets = np.arange(self.first, self.first + self.count, dtype=np.float64)
        values = self.anchor + self.step * offsets
        values.setflags(write=False)
        return values

    @property
    def start(self) -> float:
        return float(self.values[0])

    @property
    def low(self) -> float:
        return float(self.values[0])

    @property
    def high(self) -> float:
        return float(self.values[-1])

    def index(self, level: float) -> int:
        """Index of a level lying on the grid."""
        k = int(round((level - self.anchor) / self.step)) - self.first
        if not 0 <= k < self.count or abs(self.values[k] - level) > LEVEL_RTOL * max(1.0, abs(level)):
            raise ArgumentError(f"level {level} is not on the grid")
        return k

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "LevelGrid":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ArgumentError("level grid is empty")
        if values.size == 1:
            raise ArgumentError("level grid needs at least two levels to define a spacing")
        step = (values[-1] - values[0]) / (values.size - 1)
        if step <= 0.0 or not np.allclose(np.diff(values), step, rtol=LEVEL_RTOL, atol=0.0):
            raise ArgumentError("level grid must be increasing and uniform")
        return cls(float(values[0]), float(step), int(values.size))


def level_grid(low: float, high: float, epsilon: float, dy: float, anchor: float = 0.0) -> LevelGrid:
    """
    Uniform grid of spacing dy covering [low - 3 eps, high + 3 eps] and containing
    `anchor` exactly.
    """
    if not (epsilon > 0.0):
        raise ArgumentError(f"epsilon must be > 0, got {epsilon}")
    if not (dy > 0.0):
        raise ArgumentError(f"dy must be > 0, got {dy}")
    k_lo = math.floor((low - GRID_MARGIN * epsilon - anchor) / dy)
    k_hi = math.ceil((high + GRID_MARGIN * epsilon - anchor) / dy)
    return LevelGrid(float(anchor), float(dy), k_hi - k_lo + 1, k_lo)


def level_grid_for(path: Path, epsilon: float, dy: float, anchor: float = 0.0) -> LevelGrid:
    """level_grid over the range of `path` widened to reach `anchor`, so the anchor is always a level."""
    low = min(path.running_min(), anchor)
    high = max(path.running_max(), anchor)
    return level_grid(low, high, epsilon, dy, anchor)


@dataclass(frozen=True, eq=False)
class LocalTimeField:
    path: Path
    levels: LevelGrid
    epsilon: float
    convention: Convention
    increments: sparse.csr_matrix
    evaluation: str = "left"

    @property
    def dy(self) -> float:
        return self.levels.step

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def end_index(self) -> int:
        return self.path.end_index

    def values_at(self, j: int) -> np.ndarray:
        """L[j][:]; L[0] is identically zero."""
        if not 0 <= j <= self.end_index:
            raise ArgumentError(f"time index {j} outside 0..{self.end_index}")
        if j == 0:
            return np.zeros(self.levels.count)
        return np.asarray(self.increments[:j].sum(axis=0)).ravel()

    @cached_property
    def _final(self) -> np.ndarray:
        final = np.asarray(self.increments.sum(axis=0)).ravel()
        final.setflags(write=False)
        return final

    def final(self) -> np.ndarray:
        return self._final

    def at_level(self, level: float) -> float:
        """L[N] at a level lying on the grid."""
        return float(self._final[self.levels.index(level)])

    def dense(self) -> np.ndarray:
        """Full (N+1) x K matrix; intended for small fields."""
        rows = np.cumsum(self.increments.toarray(), axis=0)
        return np.vstack([np.zeros((1, self.levels.count)), rows])

    def total_mass(self) -> np.ndarray:
        """2 * dy * sum_k L[j][k] for every j; nondecreasing in j."""
        per_step = np.asarray(self.increments.sum(axis=1)).ravel()
        return 2.0 * self.dy * np.concatenate([[0.0], np.cumsum(per_step)])

    def to_csv(self, target: Union[str, FilePath, io.TextIOBase], every: int = 1) -> None:
        """Rows t,y,L for every `every`-th time index (the final time always included)."""
        if every < 1:
            raise ArgumentError("every must be >= 1")
        own = isinstance(target, (str, FilePath))
        handle = open(target, "w", encoding="utf-8", newline="") if own else target
        try:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", "y", "L"])
            times, levels = self.times, self.levels.values.tolist()
            row = np.zeros(self.levels.count)
            for j in range(self.end_index + 1):
                if j > 0:
                    row = row + self.increments.getrow(j - 1).toarray().ravel()
                if j % every == 0 or j == self.end_index:
                    t = repr(float(times[j]))
                    for y, value in zip(levels, row.tolist()):
                        writer.writerow([t, repr(y), repr(value)])
        finally:
            if own:
                handle.close()


def _as_level_grid(y_grid) -> LevelGrid:
    if isinstance(y_grid, LevelGrid):
        return y_grid
    return LevelGrid.from_values(y_grid)


def local_time_field(
    path: Path,
    y_grid,
    epsilon: float,
    convention=Convention.QUARTER,
    evaluation: str = "left",
    clock: Optional[Sequence[float]] = None,
) -> LocalTimeField:
    """
    Band-counting estimate of the local time of `path`. `clock` overrides the
    quadratic-variation increments (needed when the banded process differs from
    the one whose bracket drives the clock, as for x - m̄).
    """
    if not (math.isfinite(epsilon) and epsilon > 0.0):
        raise ArgumentError(f"epsilon must be finite and > 0, got {epsilon}")
    if evaluation not in ("left", "midpoint"):
        raise ArgumentError(f"evaluation must be 'left' or 'midpoint', got {evaluation!r}")
    convention = Convention.parse(convention)
    levels = _as_level_grid(y_grid)
    x = path.values
    tol = LEVEL_RTOL * max(1.0, float(np.abs(x).max()))
    if levels.low > x.min() - GRID_MARGIN * epsilon + tol or levels.high < x.max() + GRID_MARGIN * epsilon - tol:
        raise ArgumentError(
            f"level grid [{levels.low}, {levels.high}] does not cover the path range "
            f"[{x.min()}, {x.max()}] widened by {GRID_MARGIN} eps"
        )
    n_steps = path.end_index
    if clock is None:
        weights = np.diff(x) ** 2
    else:
        weights = np.asarray(clock, dtype=np.float64)
        if weights.shape != (n_steps,):
            raise LengthMismatchError(f"clock has {weights.size} increments for {n_steps} steps")
    weights = weights * (convention.value / epsilon)
    points = x[:-1] if evaluation == "left" else 0.5 * (x[:-1] + x[1:])

    y = levels.values
    width = int(math.ceil(2.0 * epsilon / levels.step)) + 2
    first = np.floor((points - epsilon - levels.start) / levels.step).astype(np.int64)
    candidates = first[:, None] + np.arange(width, dtype=np.int64)[None, :]
    valid = (candidates >= 0) & (candidates < levels.count)
    safe = np.clip(candidates, 0, levels.count - 1)
    hit = valid & (np.abs(points[:, None] - y[safe]) <= epsilon) & (weights[:, None] > 0.0)
    rows = np.broadcast_to(np.arange(n_steps)[:, None], candidates.shape)[hit]
    cols = safe[hit]
    data = np.broadcast_to(weights[:, None], candidates.shape)[hit]
    increments = sparse.csr_matrix((data, (rows, cols)), shape=(n_steps, levels.count))
    logger.debug(
        "local time field: N=%d, K=%d, eps=%g, dy=%g, %s convention, %d nonzeros",
        n_steps, levels.count, epsilon, levels.step, convention.label, increments.nnz,
    )
    return LocalTimeField(path, levels, float(epsilon), convention, increments, evaluation)


def occupation_lhs(psi: LevelFunction, path: Path) -> float:
    """Σ_j psi(t_j, x_j) (Δx_j)^2."""
    x = path.values
    values = np.asarray(psi(path.times[:-1], x[:-1]), dtype=np.float64)
    return float(np.sum(values * np.diff(x) ** 2))


def occupation_rhs(psi: LevelFunction, field: LocalTimeField) -> float:
    """2 Σ_k dy Σ_j psi(t_j, y_k) (L[j+1][k] - L[j][k]); quarter convention only."""
    if field.convention is not Convention.QUARTER:
        raise ConventionError(
            f"occupation formula needs the quarter convention, field uses {field.convention.label}"
        )
    coo = field.increments.tocoo()
    values = np.asarray(psi(field.times[coo.row], field.levels.values[coo.col]), dtype=np.float64)
    return float(2.0 * field.dy * np.sum(values * coo.data))


def stieltjes_in_y(L_row: Sequence[float], g, y_grid) -> float:
    """
    Σ_k L(y_k) (g(y_{k+1}) - g(y_k)). `g` is a callable of the level or its
    samples on the grid; indicator-type g are handled exactly.
    """
    levels = _as_level_grid(y_grid)
    L_row = np.asarray(L_row, dtype=np.float64)
    if L_row.shape != (levels.count,):
        raise LengthMismatchError(f"L row has {L_row.size} values for {levels.count} levels")
    samples = np.asarray(g(levels.values) if callable(g) else g, dtype=np.float64)
    if samples.shape != (levels.count,):
        raise LengthMismatchError(f"g has {samples.size} samples for {levels.count} levels")
    return float(np.dot(L_row[:-1], np.diff(samples)))


def double_stieltjes(field: LocalTimeField, g: LevelFunction, chunk: int = 256) -> float:
    """
    Σ_{j,k} L[j][k] Δ²g with the mixed difference
    g(t_{j+1}, y_{k+1}) - g(t_{j+1}, y_k) - g(t_j, y_{k+1}) + g(t_j, y_k).
    Rows of L are rebuilt chunk by chunk from the sparse increments. A g that
    does not depend on time gives exactly 0.
    """
    times = field.times
    y = field.levels.values
    count = field.levels.count
    carry = np.zeros(count)
    total = 0.0
    n_steps = field.end_index
    for start in range(0, n_steps, chunk):
        stop = min(start + chunk, n_steps)
        block = field.increments[start:stop].toarray()
        rows = carry + np.vstack([np.zeros((1, count)), np.cumsum(block, axis=0)[:-1]])
        samples = np.asarray(g(times[start : stop + 1, None], y[None, :]), dtype=np.float64)
        samples = np.broadcast_to(samples, (stop - start + 1, count))
        dy_diff = np.diff(samples, axis=1)
        mixed = dy_diff[1:] - dy_diff[:-1]
        total += float(np.sum(rows[:, :-1] * mixed))
        carry = carry + block.sum(axis=0)
    return total


# Test functions of the occupation-time suite, psi(t, y).
OCCUPATION_SUITE: dict[str, LevelFunction] = {
    "one": lambda t, y: np.ones_like(y * 1.0 + t * 0.0),
    "y": lambda t, y: y + 0.0 * t,
    "y2": lambda t, y: y * y + 0.0 * t,
    "band[-0.5,0.5]": lambda t, y: ((y >= -0.5) & (y <= 0.5)).astype(np.float64) + 0.0 * t,
    "s_y": lambda t, y: t * y,
}


def _absolute(psi: LevelFunction) -> LevelFunction:
    return lambda t, y: np.abs(psi(t, y))


@dataclass
class OccupationRow:
    psi: str
    lhs: float
    rhs: float
    rel_gap: float


def occupation_row(name: str, psi: LevelFunction, field: LocalTimeField) -> OccupationRow:
    """
    Both sides of the occupation formula. The gap is relative to Σ|psi|(Δx)^2 so
    that sign-changing psi with a near-zero integral are not over-penalized.
    """
    lhs = occupation_lhs(psi, field.path)
    rhs = occupation_rhs(psi, field)
    scale = occupation_lhs(_absolute(psi), field.path)
    gap = abs(lhs - rhs)
    rel_gap = gap / scale if scale > 0.0 else gap
    return OccupationRow(name, lhs, rhs, rel_gap)


def write_occupation_csv(rows: Sequence[OccupationRow], target: Union[str, FilePath, io.TextIOBase]) -> None:
    own = isinstance(target, (str, FilePath))
    handle = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["psi", "lhs", "rhs", "rel_gap"])
        for row in rows:
            writer.writerow([row.psi, repr(row.lhs), repr(row.rhs), repr(row.rel_gap)])
    finally:
        if own:
            handle.close()
