"""
Functionals f: Λ -> R, the built-in library and finite-difference estimators of
the functional derivatives.

Every functional exposes its bump profile F(Y, h) = f(bump(Y, h)) and its
replacement profile 𝓕(Y, y) = f(replace_last(Y, y)) as vectorized methods.
Built-ins also carry exact analytic derivatives keyed by kind:

    "t"   time derivative along flat extensions
    "x"   space derivative (two-sided, only where it exists everywhere)
    "xx"  second space derivative
    "x-"  left space derivative
    "x+"  right space derivative

Verification traces evaluate time derivatives at the prefixes X_j and space
derivatives at the held prefixes Z_j = hold(X_j) (X_j followed by one flat
step), which is the discrete form of evaluating at X_{s-} along a continuous path.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, DomainError, UnsupportedFunctionalError
from .paths import SNAP_RTOL, Path, bump, flat_extend, hold, lambda_distance, replace_last

logger = logging.getLogger(__name__)

SPACE_KINDS = ("x", "xx", "x-", "x+")
DERIVATIVE_KINDS = ("t",) + SPACE_KINDS

DEFAULT_H0 = 1e-2
DEFAULT_LEVELS = 6
# Step of the left difference used for ∂_y^- 𝓕 when no closed form exists.
LATTICE_STEP = 1e-6


class Functional:
    """
    Base class: subclasses implement evaluate(); the vectorized profiles and
    traces fall back to loops over evaluate() unless overridden.
    """

    name: str = "functional"
    convex: bool = False
    # Level that local-time grids should contain exactly (the kink of |y - K|).
    anchor: float = 0.0
    analytic: frozenset = frozenset()

    def evaluate(self, path: Path) -> float:
        raise NotImplementedError

    def __call__(self, path: Path) -> float:
        return self.evaluate(path)

    def bumped(self, path: Path, h) -> np.ndarray:
        """F(Y, h) for each h."""
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        return np.array([self.evaluate(bump(path, float(v))) for v in h])

    def replaced(self, path: Path, y) -> np.ndarray:
        """𝓕(Y, y) for each y."""
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return np.array([self.evaluate(replace_last(path, float(v))) for v in y])

    def kinks(self, path: Path) -> tuple[float, ...]:
        """Bump values h at which h -> F(Y, h) may fail to be smooth."""
        return ()

    def supports(self, *kinds: str) -> bool:
        return all(kind in self.analytic for kind in kinds)

    def _require(self, kind: str) -> None:
        if kind not in DERIVATIVE_KINDS:
            raise ArgumentError(f"unknown derivative kind {kind!r}")
        if kind not in self.analytic:
            raise UnsupportedFunctionalError(f"{self.name} has no analytic {kind!r} derivative")

    def derivative(self, kind: str, path: Path) -> float:
        self._require(kind)
        raise NotImplementedError

    def value_trace(self, path: Path) -> np.ndarray:
        """f(X_j) for j = 0..k."""
        return np.array([self.evaluate(path.prefix(j)) for j in range(path.end_index + 1)])

    def derivative_trace(self, kind: str, path: Path) -> np.ndarray:
        """Δ_t f(X_j) or a space derivative at Z_j, for j = 0..k-1."""
        self._require(kind)
        k = path.end_index
        if kind == "t":
            return np.array([self.derivative("t", path.prefix(j)) for j in range(k)])
        return np.array([self.derivative(kind, hold(path.prefix(j))) for j in range(k)])

    def y_derivative_lattice(self, path: Path, index, levels) -> np.ndarray:
        """
        g(j, y) = ∂_y^- 𝓕(hold(X_j), y), broadcast over `index` and `levels`.
        Generic version: left differences of the replacement profile.
        """
        index, levels = np.broadcast_arrays(
            np.asarray(index, dtype=np.int64), np.asarray(levels, dtype=np.float64)
        )
        out = np.empty(levels.shape, dtype=np.float64)
        for j in np.unique(index):
            mask = index == j
            held = hold(path.prefix(int(j)))
            y = levels[mask]
            upper = self.replaced(held, y)
            lower = self.replaced(held, y - LATTICE_STEP)
            out[mask] = (upper - lower) / LATTICE_STEP
        return out

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


def _held_times(path: Path) -> np.ndarray:
    """t_{j+1} for j = 0..k-1: the end times of the held prefixes."""
    return np.arange(1, path.end_index + 1, dtype=np.float64) * path.grid.dt


class RunningMax(Functional):
    """m̄(Y) = max of the samples. Bumps act on the last sample only."""

    name = "running_max"
    convex = True
    analytic = frozenset({"t", "x-", "x+"})

    def evaluate(self, path):
        return float(path.values.max())

    def bumped(self, path, h):
        h = np.asarray(h, dtype=np.float64)
        return np.atleast_1d(np.maximum(path.left_max(), path.last + h))

    def replaced(self, path, y):
        return np.atleast_1d(np.maximum(path.left_max(), np.asarray(y, dtype=np.float64)))

    def kinks(self, path):
        return (path.left_max() - path.last,) if path.end_index > 0 else ()

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t":
            return 0.0
        if kind == "x-":
            return 1.0 if path.last > path.left_max() else 0.0
        return 1.0 if path.last >= path.left_max() else 0.0

    def value_trace(self, path):
        return np.maximum.accumulate(path.values)

    def derivative_trace(self, kind, path):
        self._require(kind)
        k = path.end_index
        if kind == "x+":
            x = path.values[:-1]
            return (x == np.maximum.accumulate(x)).astype(np.float64)
        return np.zeros(k)

    def y_derivative_lattice(self, path, index, levels):
        peak = np.maximum.accumulate(path.values)[np.asarray(index)]
        return (np.asarray(levels) > peak).astype(np.float64)


class RunningMin(Functional):
    """m̲(Y) = min of the samples; concave in the bump variable."""

    name = "running_min"
    analytic = frozenset({"t", "x-", "x+"})

    def evaluate(self, path):
        return float(path.values.min())

    def bumped(self, path, h):
        h = np.asarray(h, dtype=np.float64)
        return np.atleast_1d(np.minimum(path.left_min(), path.last + h))

    def replaced(self, path, y):
        return np.atleast_1d(np.minimum(path.left_min(), np.asarray(y, dtype=np.float64)))

    def kinks(self, path):
        return (path.left_min() - path.last,) if path.end_index > 0 else ()

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t":
            return 0.0
        if kind == "x-":
            return 1.0 if path.last <= path.left_min() else 0.0
        return 1.0 if path.last < path.left_min() else 0.0

    def value_trace(self, path):
        return np.minimum.accumulate(path.values)

    def derivative_trace(self, kind, path):
        self._require(kind)
        k = path.end_index
        if kind == "x-":
            x = path.values[:-1]
            return (x == np.minimum.accumulate(x)).astype(np.float64)
        return np.zeros(k)

    def y_derivative_lattice(self, path, index, levels):
        trough = np.minimum.accumulate(path.values)[np.asarray(index)]
        return (np.asarray(levels) <= trough).astype(np.float64)


class RunningIntegral(Functional):
    """∫_0^t y_u du for the piecewise-constant path: dt * sum of y_i, i < k."""

    name = "running_integral"
    convex = True
    analytic = frozenset(DERIVATIVE_KINDS)

    def evaluate(self, path):
        return float(np.sum(path.values[:-1]) * path.grid.dt)

    def bumped(self, path, h):
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        return np.full(h.shape, self.evaluate(path))

    def replaced(self, path, y):
        return self.bumped(path, y)

    def derivative(self, kind, path):
        self._require(kind)
        return path.last if kind == "t" else 0.0

    def value_trace(self, path):
        return np.concatenate([[0.0], np.cumsum(path.values[:-1]) * path.grid.dt])

    def derivative_trace(self, kind, path):
        self._require(kind)
        if kind == "t":
            return path.values[:-1].copy()
        return np.zeros(path.end_index)

    def y_derivative_lattice(self, path, index, levels):
        index, levels = np.broadcast_arrays(np.asarray(index), np.asarray(levels, dtype=np.float64))
        return np.zeros(levels.shape)


class QuadraticVariation(Functional):
    """QV(Y) = sum of squared increments. QV(Y^h) = QV(Y_{t-}) + (y_t + h - y_{t-})^2."""

    name = "quadratic_variation"
    convex = True
    analytic = frozenset(DERIVATIVE_KINDS)

    def evaluate(self, path):
        return float(np.sum(np.diff(path.values) ** 2))

    def _left(self, path) -> tuple[float, Optional[float]]:
        if path.end_index == 0:
            return 0.0, None
        return float(np.sum(np.diff(path.values[:-1]) ** 2)), float(path.values[-2])

    def replaced(self, path, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        qv_left, previous = self._left(path)
        if previous is None:
            return np.zeros(y.shape)
        return qv_left + (y - previous) ** 2

    def bumped(self, path, h):
        return self.replaced(path, path.last + np.asarray(h, dtype=np.float64))

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t" or path.end_index == 0:
            return 0.0
        if kind == "xx":
            return 2.0
        return 2.0 * (path.last - float(path.values[-2]))

    def value_trace(self, path):
        return np.concatenate([[0.0], np.cumsum(np.diff(path.values) ** 2)])

    def derivative_trace(self, kind, path):
        self._require(kind)
        k = path.end_index
        return np.full(k, 2.0) if kind == "xx" else np.zeros(k)

    def y_derivative_lattice(self, path, index, levels):
        return 2.0 * (np.asarray(levels, dtype=np.float64) - path.values[np.asarray(index)])


class TerminalValue(Functional):
    name = "terminal_value"
    convex = True
    analytic = frozenset(DERIVATIVE_KINDS)

    def evaluate(self, path):
        return path.last

    def bumped(self, path, h):
        return np.atleast_1d(path.last + np.asarray(h, dtype=np.float64))

    def replaced(self, path, y):
        return np.atleast_1d(np.asarray(y, dtype=np.float64)).copy()

    def derivative(self, kind, path):
        self._require(kind)
        return 1.0 if kind in ("x", "x-", "x+") else 0.0

    def value_trace(self, path):
        return path.values.copy()

    def derivative_trace(self, kind, path):
        self._require(kind)
        fill = 1.0 if kind in ("x", "x-", "x+") else 0.0
        return np.full(path.end_index, fill)

    def y_derivative_lattice(self, path, index, levels):
        index, levels = np.broadcast_arrays(np.asarray(index), np.asarray(levels, dtype=np.float64))
        return np.ones(levels.shape)


class AbsTerminalMinus(Functional):
    """|y_t - K|; its left derivative is sgn⁻(y - K): -1 on (-inf, K], +1 on (K, inf)."""

    convex = True
    analytic = frozenset({"t", "x-", "x+"})

    def __init__(self, strike: float = 0.0):
        self.strike = float(strike)
        self.anchor = self.strike
        self.name = f"abs_terminal_minus(K={self.strike!r})"

    def evaluate(self, path):
        return abs(path.last - self.strike)

    def bumped(self, path, h):
        return np.atleast_1d(np.abs(path.last + np.asarray(h, dtype=np.float64) - self.strike))

    def replaced(self, path, y):
        return np.atleast_1d(np.abs(np.asarray(y, dtype=np.float64) - self.strike))

    def kinks(self, path):
        return (self.strike - path.last,)

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t":
            return 0.0
        if kind == "x-":
            return 1.0 if path.last > self.strike else -1.0
        return 1.0 if path.last >= self.strike else -1.0

    def value_trace(self, path):
        return np.abs(path.values - self.strike)

    def derivative_trace(self, kind, path):
        self._require(kind)
        x = path.values[:-1]
        if kind == "t":
            return np.zeros(x.size)
        if kind == "x-":
            return np.where(x > self.strike, 1.0, -1.0)
        return np.where(x >= self.strike, 1.0, -1.0)

    def y_derivative_lattice(self, path, index, levels):
        index, levels = np.broadcast_arrays(np.asarray(index), np.asarray(levels, dtype=np.float64))
        return np.where(levels > self.strike, 1.0, -1.0)


@dataclass(frozen=True)
class TimeSpaceFunction:
    """h(t, y) with its partial derivatives, all vectorized over numpy arrays."""

    name: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_t: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_yy: Callable[[np.ndarray, np.ndarray], np.ndarray]
    convex_in_y: bool = False


TIME_SPACE_CATALOGUE: dict[str, TimeSpaceFunction] = {
    "square": TimeSpaceFunction(
        "square",
        value=lambda t, y: y * y,
        d_t=lambda t, y: np.zeros_like(y * t),
        d_y=lambda t, y: 2.0 * y + 0.0 * t,
        d_yy=lambda t, y: np.full_like(y * t, 2.0),
        convex_in_y=True,
    ),
    "heat": TimeSpaceFunction(
        "heat",
        value=lambda t, y: y * y - t,
        d_t=lambda t, y: np.full_like(y * t, -1.0),
        d_y=lambda t, y: 2.0 * y + 0.0 * t,
        d_yy=lambda t, y: np.full_like(y * t, 2.0),
        convex_in_y=True,
    ),
    "cubic": TimeSpaceFunction(
        "cubic",
        value=lambda t, y: y**3,
        d_t=lambda t, y: np.zeros_like(y * t),
        d_y=lambda t, y: 3.0 * y * y + 0.0 * t,
        d_yy=lambda t, y: 6.0 * y + 0.0 * t,
    ),
    "exp_martingale": TimeSpaceFunction(
        "exp_martingale",
        value=lambda t, y: np.exp(y - 0.5 * t),
        d_t=lambda t, y: -0.5 * np.exp(y - 0.5 * t),
        d_y=lambda t, y: np.exp(y - 0.5 * t),
        d_yy=lambda t, y: np.exp(y - 0.5 * t),
        convex_in_y=True,
    ),
}


class PathIndependent(Functional):
    """f(Y) = h(t, y_t)."""

    analytic = frozenset(DERIVATIVE_KINDS)

    def __init__(self, h: TimeSpaceFunction):
        self.h = h
        self.convex = h.convex_in_y
        self.name = f"path_independent({h.name})"

    def _call(self, fn, t, y) -> np.ndarray:
        return np.asarray(fn(np.asarray(t, dtype=np.float64), np.asarray(y, dtype=np.float64)), dtype=np.float64)

    def evaluate(self, path):
        return float(self._call(self.h.value, path.end_time, path.last))

    def bumped(self, path, h):
        y = path.last + np.atleast_1d(np.asarray(h, dtype=np.float64))
        return np.atleast_1d(self._call(self.h.value, path.end_time, y))

    def replaced(self, path, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return np.atleast_1d(self._call(self.h.value, path.end_time, y))

    def derivative(self, kind, path):
        self._require(kind)
        fn = {"t": self.h.d_t, "xx": self.h.d_yy}.get(kind, self.h.d_y)
        return float(self._call(fn, path.end_time, path.last))

    def value_trace(self, path):
        return self._call(self.h.value, path.times, path.values)

    def derivative_trace(self, kind, path):
        self._require(kind)
        x = path.values[:-1]
        if kind == "t":
            return self._call(self.h.d_t, path.times[:-1], x)
        fn = self.h.d_yy if kind == "xx" else self.h.d_y
        return self._call(fn, _held_times(path), x)

    def y_derivative_lattice(self, path, index, levels):
        times = (np.asarray(index, dtype=np.float64) + 1.0) * path.grid.dt
        return self._call(self.h.d_y, times, levels)


@dataclass(frozen=True)
class Psi:
    """A catalogue ψ with closed-form antiderivative ∫_0^s ψ and derivative."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    integral: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    nondecreasing: bool

    def __call__(self, s):
        return self.value(np.asarray(s, dtype=np.float64))


PSI_CATALOGUE: dict[str, Psi] = {
    "one": Psi(
        "one",
        value=lambda s: np.ones_like(s),
        integral=lambda s: s + 0.0,
        derivative=lambda s: np.zeros_like(s),
        nondecreasing=True,
    ),
    "identity": Psi(
        "identity",
        value=lambda s: s + 0.0,
        integral=lambda s: 0.5 * s * s,
        derivative=lambda s: np.ones_like(s),
        nondecreasing=True,
    ),
    "square": Psi(
        "square",
        value=lambda s: s * s,
        integral=lambda s: s**3 / 3.0,
        derivative=lambda s: 2.0 * s,
        nondecreasing=False,
    ),
    "exp_neg": Psi(
        "exp_neg",
        value=lambda s: np.exp(-s),
        integral=lambda s: 1.0 - np.exp(-s),
        derivative=lambda s: -np.exp(-s),
        nondecreasing=False,
    ),
}


def get_psi(name: str) -> Psi:
    try:
        return PSI_CATALOGUE[name]
    except KeyError:
        raise ArgumentError(
            f"unknown psi {name!r}; choose from {', '.join(sorted(PSI_CATALOGUE))}"
        ) from None


def max_martingale_h(psi: Psi, h0: float = 0.0) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """H(x1, x2) = ∫_0^{x2} ψ - ψ(x2)(x2 - x1) + H0, vectorized."""

    def H(x1, x2):
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        return psi.integral(x2) - psi.value(x2) * (x2 - x1) + h0

    H.__name__ = f"H_{psi.name}"
    return H


class MaxMartingaleFunctional(Functional):
    """f(Y) = H(y_t, m̄(Y)) with H built from a catalogue ψ."""

    analytic = frozenset({"t", "x", "x-", "x+"})

    def __init__(self, psi: Psi, h0: float = 0.0):
        self.psi = psi
        self.h0 = float(h0)
        self.H = max_martingale_h(psi, self.h0)
        self.convex = psi.nondecreasing
        self.name = f"max_martingale(psi={psi.name}, H0={self.h0!r})"

    def evaluate(self, path):
        return float(self.H(path.last, path.values.max()))

    def replaced(self, path, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return np.atleast_1d(self.H(y, np.maximum(path.left_max(), y)))

    def bumped(self, path, h):
        return self.replaced(path, path.last + np.asarray(h, dtype=np.float64))

    def kinks(self, path):
        return (path.left_max() - path.last,) if path.end_index > 0 else ()

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t":
            return 0.0
        return float(self.psi(path.values.max()))

    def value_trace(self, path):
        return self.H(path.values, np.maximum.accumulate(path.values))

    def derivative_trace(self, kind, path):
        self._require(kind)
        if kind == "t":
            return np.zeros(path.end_index)
        return self.psi(np.maximum.accumulate(path.values)[:-1])

    def y_derivative_lattice(self, path, index, levels):
        peak = np.maximum.accumulate(path.values)[np.asarray(index)]
        return self.psi(np.maximum(np.asarray(levels, dtype=np.float64), peak))


class Constant(Functional):
    convex = True
    analytic = frozenset(DERIVATIVE_KINDS)

    def __init__(self, value: float = 0.0):
        self.value = float(value)
        self.name = f"constant({self.value!r})"

    def evaluate(self, path):
        return self.value

    def bumped(self, path, h):
        return np.full(np.atleast_1d(h).shape, self.value)

    def replaced(self, path, y):
        return self.bumped(path, y)

    def derivative(self, kind, path):
        self._require(kind)
        return 0.0

    def value_trace(self, path):
        return np.full(path.end_index + 1, self.value)

    def derivative_trace(self, kind, path):
        self._require(kind)
        return np.zeros(path.end_index)

    def y_derivative_lattice(self, path, index, levels):
        index, levels = np.broadcast_arrays(np.asarray(index), np.asarray(levels, dtype=np.float64))
        return np.zeros(levels.shape)


def running_max() -> RunningMax:
    return RunningMax()


def running_min() -> RunningMin:
    return RunningMin()


def running_integral() -> RunningIntegral:
    return RunningIntegral()


def quadratic_variation() -> QuadraticVariation:
    return QuadraticVariation()


def terminal_value() -> TerminalValue:
    return TerminalValue()


def abs_terminal_minus(strike: float) -> AbsTerminalMinus:
    return AbsTerminalMinus(strike)


def path_independent(h) -> PathIndependent:
    """h is a TimeSpaceFunction or the name of a TIME_SPACE_CATALOGUE entry."""
    if isinstance(h, str):
        try:
            h = TIME_SPACE_CATALOGUE[h]
        except KeyError:
            raise ArgumentError(
                f"unknown h {h!r}; choose from {', '.join(sorted(TIME_SPACE_CATALOGUE))}"
            ) from None
    return PathIndependent(h)


def max_martingale_functional(psi, h0: float = 0.0) -> MaxMartingaleFunctional:
    if isinstance(psi, str):
        psi = get_psi(psi)
    return MaxMartingaleFunctional(psi, h0)


def constant(value: float = 0.0) -> Constant:
    return Constant(value)


FUNCTIONAL_NAMES = (
    "running_max",
    "running_min",
    "running_integral",
    "quadratic_variation",
    "terminal_value",
    "abs_terminal_minus",
    "path_independent",
    "max_martingale",
    "constant",
)


def by_name(
    name: str,
    *,
    strike: float = 0.0,
    psi: str = "identity",
    h0: float = 0.0,
    h: str = "square",
    value: float = 0.0,
) -> Functional:
    """Build a built-in functional from its command-line name and parameters."""
    factories = {
        "running_max": running_max,
        "running_min": running_min,
        "running_integral": running_integral,
        "quadratic_variation": quadratic_variation,
        "terminal_value": terminal_value,
        "abs_terminal_minus": lambda: abs_terminal_minus(strike),
        "path_independent": lambda: path_independent(h),
        "max_martingale": lambda: max_martingale_functional(psi, h0),
        "constant": lambda: constant(value),
    }
    if name not in factories:
        raise ArgumentError(f"unknown functional {name!r}; choose from {', '.join(FUNCTIONAL_NAMES)}")
    return factories[name]()


def in_running_max_set(path: Path) -> bool:
    """Is the maximum attained at the last sample? Exact comparison; ties count."""
    return path.last == path.values.max()


# ---------------------------------------------------------------------------
# Finite-difference estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeEstimate:
    value: float
    steps: tuple[float, ...]
    residual: float
    divergent: bool = False


def default_steps(h0: float = DEFAULT_H0, levels: int = DEFAULT_LEVELS) -> list[float]:
    """h_k = h0 * 2^-k, k = 0..levels-1."""
    return [h0 * 2.0 ** (-k) for k in range(levels)]


def _check_steps(steps: Sequence[float]) -> list[float]:
    steps = [float(s) for s in steps]
    if not steps:
        raise ArgumentError("need at least one step")
    if any(not (s > 0.0) for s in steps):
        raise ArgumentError("steps must be positive")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ArgumentError("steps must be strictly decreasing")
    return steps


def _richardson(steps: Sequence[float], raw: Sequence[float], order_step: int) -> DerivativeEstimate:
    """
    Neville-style Richardson table. Column m removes the error term of order
    order_step * m; the estimate is the last diagonal entry and the residual is
    the spread of the last two diagonal entries.
    """
    table = [[float(v)] for v in raw]
    for i in range(1, len(raw)):
        for m in range(1, i + 1):
            ratio = (steps[i - m] / steps[i]) ** (order_step * m)
            prev, prev_up = table[i][m - 1], table[i - 1][m - 1]
            table[i].append(prev + (prev - prev_up) / (ratio - 1.0))
    diagonal = [row[-1] for row in table]
    value = diagonal[-1]
    residual = abs(diagonal[-1] - diagonal[-2]) if len(diagonal) > 1 else 0.0
    divergent = not (math.isfinite(value) and math.isfinite(residual))
    if divergent:
        logger.debug("derivative extrapolation diverged: raw=%s", list(raw))
        residual = math.inf
    return DerivativeEstimate(value=value, steps=tuple(steps), residual=residual, divergent=divergent)


def eval_bumped(f: Functional, path: Path, h: float) -> float:
    """F(Y, h) = f(Y^h)."""
    return float(f.bumped(path, [h])[0])


def eval_replaced(f: Functional, path: Path, y: float) -> float:
    """𝓕(Y, y) = f(Y_{t-}^y): the last value replaced by y."""
    return float(f.replaced(path, [y])[0])


def default_time_deltas(path: Path, levels: int = DEFAULT_LEVELS) -> list[float]:
    """dt * 2^m for m = levels-1..0, keeping those that stay within the horizon."""
    grid = path.grid
    room = grid.steps - path.end_index
    if room <= 0:
        raise DomainError("path ends at the horizon: no room for a flat extension")
    multiples = [2**m for m in range(levels - 1, -1, -1) if 2**m <= room]
    return [m * grid.dt for m in multiples]


def time_derivative_est(
    f: Functional, path: Path, deltas: Optional[Sequence[float]] = None
) -> DerivativeEstimate:
    """Forward differences along flat extensions, Richardson-extrapolated."""
    deltas = _check_steps(default_time_deltas(path) if deltas is None else deltas)
    grid = path.grid
    base = f.evaluate(path)
    used: list[float] = []
    raw: list[float] = []
    for delta in deltas:
        if path.end_time + delta > grid.horizon * (1.0 + SNAP_RTOL):
            raise DomainError(
                f"flat extension by {delta} passes the horizon T={grid.horizon}"
            )
        extended = flat_extend(path, path.end_time + delta)
        actual = extended.end_time - path.end_time
        if actual <= 0.0 or (used and actual >= used[-1]):
            continue
        used.append(actual)
        raw.append((f.evaluate(extended) - base) / actual)
    if not raw:
        raise ArgumentError("no usable time step: all deltas snap to the current end time")
    return _richardson(used, raw, order_step=1)


def space_derivative_est(
    f: Functional, path: Path, side: str = "central", steps: Optional[Sequence[float]] = None
) -> DerivativeEstimate:
    """
    Difference quotients of h -> F(Y, h). At a kink the central estimate returns
    the average of the one-sided limits.
    """
    steps = _check_steps(default_steps() if steps is None else steps)
    h = np.asarray(steps)
    if side == "left":
        raw = (f.bumped(path, [0.0])[0] - f.bumped(path, -h)) / h
        order = 1
    elif side == "right":
        raw = (f.bumped(path, h) - f.bumped(path, [0.0])[0]) / h
        order = 1
    elif side == "central":
        raw = (f.bumped(path, h) - f.bumped(path, -h)) / (2.0 * h)
        order = 2
    else:
        raise ArgumentError(f"side must be left, right or central, got {side!r}")
    return _richardson(steps, raw, order_step=order)


def second_space_derivative_est(
    f: Functional, path: Path, steps: Optional[Sequence[float]] = None
) -> DerivativeEstimate:
    steps = _check_steps(default_steps() if steps is None else steps)
    h = np.asarray(steps)
    centre = f.bumped(path, [0.0])[0]
    raw = (f.bumped(path, h) - 2.0 * centre + f.bumped(path, -h)) / (h * h)
    return _richardson(steps, raw, order_step=2)


def continuity_probe(
    f: Functional, path: Path, radius: float, samples: int = 64, seed: int = 0, xi_per_sample: int = 8
) -> float:
    """
    Heuristic modulus of continuity: the largest |F(Y, ξ) - F(Z, ξ)| over sampled
    paths Z with d_Λ(Y, Z) <= radius and ξ uniform in [-3, 3].
    """
    if not radius > 0.0:
        raise ArgumentError(f"radius must be > 0, got {radius}")

    rng = np.random.default_rng(seed)
    grid = path.grid
    k = path.end_index
    max_shift = int(math.floor(radius / grid.dt))
    worst = 0.0
    for _ in range(samples):
        shift = int(rng.integers(0, max_shift + 1)) if max_shift > 0 else 0
        if rng.random() < 0.5 and k + shift <= grid.steps:
            base = flat_extend(path, grid.time(k + shift))
        elif shift <= k:
            base = path.prefix(k - shift)
        else:
            base = path
        gap = lambda_distance(path, base)
        if gap >= radius:
            base, gap = path, 0.0
        amplitude = rng.uniform(0.0, radius - gap)
        noise = rng.uniform(-amplitude, amplitude, size=len(base))
        other = Path(grid, base.values + noise)
        xi = rng.uniform(-3.0, 3.0, size=xi_per_sample)
        diff = np.abs(f.bumped(path, xi) - f.bumped(other, xi))
        worst = max(worst, float(diff.max()))
    return worst


@dataclass(frozen=True)
class ConvexityProbe:
    max_violation: float
    samples: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance


def midpoint_convexity_probe(
    f: Functional, path: Path, samples: int = 100, seed: int = 0, span: float = 3.0, rtol: float = 1e-9
) -> ConvexityProbe:
    """F(Y, λh1 + (1-λ)h2) <= λF(Y, h1) + (1-λ)F(Y, h2) on random triples."""
    rng = np.random.default_rng(seed)
    h1 = rng.uniform(-span, span, size=samples)
    h2 = rng.uniform(-span, span, size=samples)
    lam = rng.uniform(0.0, 1.0, size=samples)
    left = f.bumped(path, lam * h1 + (1.0 - lam) * h2)
    v1, v2 = f.bumped(path, h1), f.bumped(path, h2)
    right = lam * v1 + (1.0 - lam) * v2
    scale = 1.0 + float(np.max(np.abs(np.concatenate([v1, v2]))))
    return ConvexityProbe(float(np.max(left - right)), samples, rtol * scale)


def strong_convexity_probe(
    f: Functional, path: Path, samples: int = 100, seed: int = 0, rtol: float = 1e-9
) -> ConvexityProbe:
    """
    f(λY + (1-λ)Z) <= λf(Y) + (1-λ)f(Z) for random Z with the same end time.
    Convexity in this sense implies convexity of every bump profile.
    """
    rng = np.random.default_rng(seed)
    worst = -math.inf
    scale = 1.0
    sd = math.sqrt(path.grid.dt)
    for _ in range(samples):
        steps = rng.normal(0.0, sd, size=path.end_index)
        other = Path(path.grid, rng.normal() + np.concatenate([[0.0], np.cumsum(steps)]))
        lam = rng.uniform(0.0, 1.0)
        mixed = Path(path.grid, lam * path.values + (1.0 - lam) * other.values)
        fy, fz = f.evaluate(path), f.evaluate(other)
        worst = max(worst, f.evaluate(mixed) - (lam * fy + (1.0 - lam) * fz))
        scale = max(scale, 1.0 + abs(fy), 1.0 + abs(fz))
    return ConvexityProbe(float(worst), samples, rtol * scale)
