"""
Discrete path space: uniform time grids, immutable paths and their deformations.

A Path holds the samples y_{t_0}, ..., y_{t_k} of a càdlàg path on a TimeGrid and
is read as the piecewise-constant interpolation between grid points. Every
deformation (flat extension, bump, replacement of the last value, restriction)
returns a new Path; lambda_distance compares paths ending at different times.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import Optional, Union

import numpy as np

from .errors import ArgumentError, DomainError, GridMismatchError

logger = logging.getLogger(__name__)

# Relative tolerance used when snapping times to grid points and when
# validating the spacing of a path file.
SNAP_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * dt, i = 0..steps, on [0, horizon]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)):
            raise ArgumentError(f"steps must be an integer, got {self.steps!r}")
        if self.steps < 1:
            raise ArgumentError(f"steps must be >= 1, got {self.steps}")
        horizon = float(self.horizon)
        if not math.isfinite(horizon) or horizon <= 0.0:
            raise ArgumentError(f"horizon must be finite and > 0, got {self.horizon!r}")
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, index: int) -> float:
        return index * self.dt

    def times(self, end_index: Optional[int] = None) -> np.ndarray:
        end = self.steps if end_index is None else end_index
        return np.arange(end + 1, dtype=np.float64) * self.dt

    def _position(self, s: float) -> tuple[float, bool]:
        pos = float(s) / self.dt
        nearest = round(pos)
        if abs(pos - nearest) <= SNAP_RTOL * max(1.0, abs(pos)):
            return float(nearest), True
        return pos, False

    def snap_up(self, s: float) -> int:
        """Index of the first grid point >= s (points within SNAP_RTOL count as equal)."""
        pos, on_grid = self._position(s)
        return int(pos) if on_grid else int(math.ceil(pos))

    def snap_down(self, s: float) -> int:
        """Index of the last grid point <= s."""
        pos, on_grid = self._position(s)
        return int(pos) if on_grid else int(math.floor(pos))

    def index_of(self, times) -> np.ndarray:
        """Nearest grid index for each time in `times` (vectorized)."""
        return np.rint(np.asarray(times, dtype=np.float64) / self.dt).astype(np.int64)

    def extended(self) -> "TimeGrid":
        """The same spacing with one more step, used to hold a path ending at the horizon."""
        return TimeGrid(self.horizon + self.dt, self.steps + 1)


@dataclass(frozen=True, eq=False)
class Path:
    """
    Samples of a path on [0, t_k]. values[i] = y_{t_i}; end_index k <= grid.steps.
    The array is copied on construction and made read-only.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ArgumentError("path values must be a non-empty 1-D sequence")
        if values.size > self.grid.steps + 1:
            raise ArgumentError(
                f"path has {values.size} samples but the grid holds only {self.grid.steps + 1}"
            )
        if not np.all(np.isfinite(values)):
            raise ArgumentError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def _wrap(cls, grid: TimeGrid, values: np.ndarray) -> "Path":
        """Build from an already validated read-only array without copying."""
        path = object.__new__(cls)
        object.__setattr__(path, "grid", grid)
        object.__setattr__(path, "values", values)
        return path

    @property
    def end_index(self) -> int:
        return self.values.size - 1

    @property
    def end_time(self) -> float:
        return self.end_index * self.grid.dt

    @property
    def last(self) -> float:
        return float(self.values[-1])

    @property
    def times(self) -> np.ndarray:
        return self.grid.times(self.end_index)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def running_max(self) -> float:
        return float(self.values.max())

    def running_min(self) -> float:
        return float(self.values.min())

    def left_max(self) -> float:
        """max over samples strictly before the end time; -inf for a single-sample path."""
        return float(self.values[:-1].max()) if self.end_index > 0 else -math.inf

    def left_min(self) -> float:
        return float(self.values[:-1].min()) if self.end_index > 0 else math.inf

    def prefix(self, index: int) -> "Path":
        """Restriction to grid index `index` (shares memory with this path)."""
        if index < 0 or index > self.end_index:
            raise ArgumentError(f"prefix index {index} outside 0..{self.end_index}")
        return Path._wrap(self.grid, self.values[: index + 1])

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None

    def __neg__(self) -> "Path":
        return negate(self)

    def __repr__(self) -> str:
        return (
            f"Path(end_index={self.end_index}, steps={self.grid.steps}, "
            f"horizon={self.grid.horizon}, last={self.last})"
        )


def _with_values(grid: TimeGrid, values: np.ndarray) -> Path:
    values.setflags(write=False)
    return Path._wrap(grid, values)


def flat_extend(path: Path, s: float) -> Path:
    """Hold the last value of `path` from its end time up to s (snapped up to the grid)."""
    grid = path.grid
    if s > grid.horizon * (1.0 + SNAP_RTOL):
        raise DomainError(f"cannot extend to t={s}: beyond horizon T={grid.horizon}")
    if grid.snap_down(s) < path.end_index:
        raise ArgumentError(f"cannot extend to t={s}: before end time {path.end_time}")
    target = grid.snap_up(s)
    if target > grid.steps:
        raise DomainError(f"cannot extend to t={s}: beyond horizon T={grid.horizon}")
    extra = target - path.end_index
    if extra <= 0:
        return path
    values = np.concatenate([path.values, np.full(extra, path.values[-1])])
    return _with_values(grid, values)


def bump(path: Path, h: float) -> Path:
    """Shift the last value by h."""
    values = path.values.copy()
    values[-1] = values[-1] + h
    if not math.isfinite(values[-1]):
        raise ArgumentError(f"bump by {h} produces a non-finite value")
    return _with_values(path.grid, values)


def replace_last(path: Path, y: float) -> Path:
    """Set the last value to exactly y."""
    if not math.isfinite(y):
        raise ArgumentError(f"replacement value must be finite, got {y}")
    values = path.values.copy()
    values[-1] = y
    return _with_values(path.grid, values)


def restrict(path: Path, s: float) -> Path:
    """Prefix of `path` up to time s (snapped down to the grid)."""
    if s < 0.0:
        raise ArgumentError(f"cannot restrict to negative time {s}")
    index = path.grid.snap_down(s)
    if index > path.end_index:
        raise ArgumentError(f"cannot restrict to t={s}: after end time {path.end_time}")
    return path.prefix(index)


def lambda_distance(first: Path, second: Path) -> float:
    """sup-norm distance after flat-extending the shorter path, plus the gap in end times."""
    if first.grid != second.grid:
        raise GridMismatchError("paths live on different time grids")
    short, long_ = (first, second) if first.end_index <= second.end_index else (second, first)
    k = short.end_index
    head = np.abs(short.values - long_.values[: k + 1]).max()
    tail = np.abs(long_.values[k:] - short.values[-1]).max()
    return float(max(head, tail) + (long_.end_index - k) * short.grid.dt)


def negate(path: Path) -> Path:
    return _with_values(path.grid, -path.values)


def hold(path: Path) -> Path:
    """
    The path followed by one flat step: the sampled prefix as seen just after t_k.
    A path ending at the horizon is placed on the grid extended by one step.
    """
    grid = path.grid if path.end_index < path.grid.steps else path.grid.extended()
    values = np.append(path.values, path.values[-1])
    return _with_values(grid, values)


def csv_text(path: Path) -> str:
    """`t,value` rows, one per grid point, floats in repr form."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["t", "value"])
    for t, y in zip(path.times.tolist(), path.values.tolist()):
        writer.writerow([repr(t), repr(y)])
    return buffer.getvalue()


def write_csv(path: Path, target: Union[str, FilePath]) -> None:
    target = FilePath(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(csv_text(path), encoding="utf-8")
    logger.debug("wrote %d samples to %s", len(path), target)


def read_csv(source: Union[str, FilePath], horizon: Optional[float] = None) -> Path:
    """
    Read a path written by write_csv. Times must start at 0 and be uniformly spaced
    (relative tolerance SNAP_RTOL). Without `horizon` the grid ends at the last time.
    """
    source = FilePath(source)
    with open(source, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "value"]:
            raise ArgumentError(f"{source}: expected header 't,value', got {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise ArgumentError(f"{source}: no samples")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows], dtype=np.float64)
    except ValueError as exc:
        raise ArgumentError(f"{source}: malformed row ({exc})") from exc
    times, values = data[:, 0], data[:, 1]
    if abs(times[0]) > SNAP_RTOL:
        raise ArgumentError(f"{source}: first time must be 0, got {times[0]}")
    if len(times) == 1:
        if horizon is None:
            raise ArgumentError(f"{source}: a single-sample file needs an explicit horizon")
        return Path(TimeGrid(horizon, 1), values)
    spacing = np.diff(times)
    dt = (times[-1] - times[0]) / (len(times) - 1)
    if np.any(spacing <= 0.0) or not np.allclose(spacing, dt, rtol=SNAP_RTOL, atol=0.0):
        raise ArgumentError(f"{source}: times are not monotone with uniform spacing")
    if horizon is None:
        grid = TimeGrid(float(times[-1]), len(times) - 1)
    else:
        steps = round(horizon / dt)
        if abs(steps * dt - horizon) > SNAP_RTOL * horizon or steps < len(times) - 1:
            raise ArgumentError(f"{source}: horizon {horizon} is not a grid point of spacing {dt}")
        grid = TimeGrid(horizon, steps)
    return Path(grid, values)
