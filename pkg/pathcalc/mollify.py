"""
Mollification of functionals in the bump variable.

The kernel is the smooth bump rho(x) = C * exp(-1 / (1 - x^2)) on (-1, 1). For a
functional f with bump profile F(Y, h), the mollified profile is

    F_n(Y, h) = ∫ rho(u) F(Y, h - u/n) du,     f_n(Y) = F_n(Y, 0),

and its h-derivatives are obtained by differentiating the kernel, never F:

    ∂_h^k F_n(Y, h) = n^k ∫ rho^(k)(u) F(Y, h - u/n) du.

The integral is evaluated by Gauss-Legendre quadrature on the kernel support,
split at the kinks of F so that each panel sees a smooth integrand.
"""

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FilePath
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ArgumentError, NonConvexFunctionalError, UnsupportedOrderError
from .functionals import Functional, space_derivative_est
from .paths import Path, bump
from .reports import VerificationReport

logger = logging.getLogger(__name__)

DEFAULT_NODES = 64
MIN_NODES = 8
MAX_ORDER = 2
# Panels narrower than this (in kernel units) carry no mass worth integrating.
_MIN_PANEL = 1e-14


# ∫_{-1}^{1} exp(-1/(1-x^2)) dx
BUMP_MASS = 0.44399381616807943
BUMP_NORMALIZATION = 1.0 / BUMP_MASS


@dataclass(frozen=True)
class Mollifier:
    """
    rho(x - offset) with the bump normalized to unit mass. The default offset 0
    gives the even kernel on [-1, 1]; offset 1 gives a kernel supported on [0, 2]
    that averages only left-hand values of F.
    """

    normalization: float = BUMP_NORMALIZATION
    offset: float = 0.0

    @classmethod
    def one_sided(cls) -> "Mollifier":
        return cls(offset=1.0)

    @property
    def support(self) -> tuple[float, float]:
        return (self.offset - 1.0, self.offset + 1.0)

    @property
    def even(self) -> bool:
        return self.offset == 0.0

    def __call__(self, x, order: int = 0) -> np.ndarray:
        if order not in (0, 1, 2):
            raise UnsupportedOrderError(f"kernel derivative order {order} not in 0..{MAX_ORDER}")
        x = np.asarray(x, dtype=np.float64) - self.offset
        out = np.zeros(x.shape, dtype=np.float64)
        inside = np.abs(x) < 1.0
        xi = x[inside]
        s = (1.0 - xi) * (1.0 + xi)
        rho = self.normalization * np.exp(-1.0 / s)
        if order == 0:
            out[inside] = rho
        elif order == 1:
            out[inside] = rho * (-2.0 * xi / (s * s))
        else:
            x2 = xi * xi
            out[inside] = rho * (4.0 * x2 / s**4 - 2.0 / s**2 - 8.0 * x2 / s**3)
        return out


STANDARD_MOLLIFIER = Mollifier()


def mollifier_eval(m: Mollifier, k: int, x: float) -> float:
    """rho^(k)(x) for k in {0, 1, 2}; zero outside the open support."""
    return float(m(np.asarray([x]), order=k)[0])


class MollifiedFunctional(Functional):
    """F_n of a base functional. Immutable; evaluations are pure."""

    def __init__(
        self,
        base: Functional,
        n: int,
        nodes: int = DEFAULT_NODES,
        mollifier: Optional[Mollifier] = None,
    ):
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ArgumentError(f"mollification index n must be an integer >= 1, got {n!r}")
        if isinstance(nodes, bool) or not isinstance(nodes, (int, np.integer)) or nodes < MIN_NODES:
            raise ArgumentError(f"node count must be an integer >= {MIN_NODES}, got {nodes!r}")
        self.base = base
        self.n = int(n)
        self.nodes = int(nodes)
        self.mollifier = mollifier or STANDARD_MOLLIFIER
        self.name = f"mollified({base.name}, n={self.n})"
        self.convex = base.convex
        self.anchor = base.anchor
        kinds = {"x", "xx", "x-", "x+"}
        if base.supports("t"):
            kinds.add("t")
        self.analytic = frozenset(kinds)
        self._gl_x, self._gl_w = leggauss(self.nodes)

    def _rule(self, path: Path, h: float) -> tuple[np.ndarray, np.ndarray, float]:
        """Kernel-variable nodes u_i, raw weights and the discrete kernel mass."""
        lo, hi = self.mollifier.support
        cuts = sorted(
            u for u in (self.n * (h - kink) for kink in self.base.kinks(path)) if lo < u < hi
        )
        edges = [lo, *cuts, hi]
        nodes, weights = [], []
        for a, b in zip(edges, edges[1:]):
            if b - a <= _MIN_PANEL:
                continue
            half = 0.5 * (b - a)
            nodes.append(half * self._gl_x + 0.5 * (a + b))
            weights.append(half * self._gl_w)
        u = np.concatenate(nodes)
        w = np.concatenate(weights)
        mass = float(np.dot(w, self.mollifier(u, order=0)))
        return u, w, mass

    def h_derivative(self, path: Path, h: float, order: int) -> float:
        """∂_h^order F_n(Y, h) by kernel differentiation."""
        if order not in (0, 1, 2):
            raise UnsupportedOrderError(f"mollified derivative order {order} not in 0..{MAX_ORDER}")
        u, w, mass = self._rule(path, h)
        weights = w * self.mollifier(u, order=order) / mass
        values = self.base.bumped(path, h - u / self.n)
        centre = float(self.base.bumped(path, [h])[0])
        # ∫rho^(k) is 1 for k = 0 and 0 otherwise; integrating F - F(h) keeps
        # locally constant and linear profiles free of cancellation noise.
        total = (centre if order == 0 else 0.0) + float(np.dot(weights, values - centre))
        return total * self.n**order

    def bumped(self, path, h):
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        return np.array([self.h_derivative(path, float(v), 0) for v in h])

    def replaced(self, path, y):
        return self.bumped(path, np.asarray(y, dtype=np.float64) - path.last)

    def evaluate(self, path):
        return self.h_derivative(path, 0.0, 0)

    def derivative(self, kind, path):
        self._require(kind)
        if kind == "t":
            return self.time_derivative(path)
        return self.h_derivative(path, 0.0, 2 if kind == "xx" else 1)

    def time_derivative(self, path: Path, h: float = 0.0) -> float:
        """(Δ_t F)_n(Y, h): the base time derivative averaged over bumped paths."""
        u, w, mass = self._rule(path, h)
        weights = w * self.mollifier(u, order=0) / mass
        values = np.array([self.base.derivative("t", bump(path, float(xi))) for xi in h - u / self.n])
        return float(np.dot(weights, values))


def mollify(f: Functional, n: int, nodes: int = DEFAULT_NODES, mollifier: Optional[Mollifier] = None) -> MollifiedFunctional:
    return MollifiedFunctional(f, n, nodes=nodes, mollifier=mollifier)


def mollified_deriv(fn: MollifiedFunctional, k: int, path: Path, h: float = 0.0) -> float:
    return fn.h_derivative(path, h, k)


def _left_derivative(f: Functional, path: Path) -> float:
    if f.supports("x-"):
        return f.derivative("x-", path)
    return space_derivative_est(f, path, side="left").value


def _right_derivative(f: Functional, path: Path) -> float:
    if f.supports("x+"):
        return f.derivative("x+", path)
    return space_derivative_est(f, path, side="right").value


def envelope_bound(f: Functional, path: Path, mollifier: Optional[Mollifier] = None) -> float:
    """|∂^- F(Y, -rho_min)| + |∂^- F(Y, -rho_max)|, a bound on |Δ_x f_n(Y)| for convex f."""
    lo, hi = (mollifier or STANDARD_MOLLIFIER).support
    return abs(_left_derivative(f, bump(path, -lo))) + abs(_left_derivative(f, bump(path, -hi)))


@dataclass
class ConvergenceRow:
    n: int
    f_n: float
    dx_f_n: float
    gap_to_f: float


@dataclass
class ConvergenceReport:
    """
    f_n(Y) and Δ_x f_n(Y) along an increasing sequence of n. Failed properties
    are recorded as flags; nothing here raises on a property failure.
    """

    functional: str
    f: float
    left_derivative: float
    right_derivative: float
    expected_limit: float
    rows: list[ConvergenceRow] = field(default_factory=list)
    tolerance: float = 1e-8
    limit_tolerance: float = 1e-6

    @property
    def gaps(self) -> list[float]:
        return [row.gap_to_f for row in self.rows]

    @property
    def converges(self) -> bool:
        gaps = self.gaps
        nonincreasing = all(b <= a + self.tolerance for a, b in zip(gaps, gaps[1:]))
        shrinks = len(gaps) < 2 or gaps[-1] <= max(self.tolerance, 0.5 * gaps[0])
        return nonincreasing and shrinks

    @property
    def monotone(self) -> bool:
        dx = [row.dx_f_n for row in self.rows]
        return all(b >= a - self.tolerance for a, b in zip(dx, dx[1:]))

    @property
    def limit(self) -> float:
        return self.rows[-1].dx_f_n if self.rows else math.nan

    @property
    def limit_matches(self) -> bool:
        return abs(self.limit - self.expected_limit) <= self.limit_tolerance

    @property
    def passed(self) -> bool:
        return self.converges and self.monotone and self.limit_matches

    def failures(self) -> list[str]:
        reasons = []
        if not self.converges:
            reasons.append("f_n does not approach f monotonically")
        if not self.monotone:
            reasons.append("dx f_n decreases with n beyond tolerance")
        if not self.limit_matches:
            reasons.append(f"dx f_n -> {self.limit!r}, expected {self.expected_limit!r}")
        return reasons

    def to_dict(self) -> dict:
        data = asdict(self)
        data.update(
            converges=self.converges,
            monotone=self.monotone,
            limit=self.limit,
            passed=self.passed,
        )
        return data

    def to_csv(self, target: Union[str, FilePath, io.TextIOBase, None] = None) -> str:
        """CSV columns n,f_n,dx_f_n,gap_to_f; returns the text and writes it if a target is given."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["n", "f_n", "dx_f_n", "gap_to_f"])
        for row in self.rows:
            writer.writerow([row.n, repr(row.f_n), repr(row.dx_f_n), repr(row.gap_to_f)])
        text = buffer.getvalue()
        if isinstance(target, (str, FilePath)):
            FilePath(target).write_text(text, encoding="utf-8")
        elif target is not None:
            target.write(text)
        return text

    def to_verification_report(self) -> VerificationReport:
        return VerificationReport(
            identity="mollify_convergence",
            lhs=self.limit,
            terms={"expected_limit": self.expected_limit},
            config={"functional": self.functional, "n_list": [row.n for row in self.rows]},
            passed=self.passed,
            details={
                "f": self.f,
                "left_derivative": self.left_derivative,
                "right_derivative": self.right_derivative,
                "converges": self.converges,
                "monotone": self.monotone,
                "failures": self.failures(),
            },
            rows=[asdict(row) for row in self.rows],
        )


def convergence_report(
    f: Functional,
    path: Path,
    n_list: Sequence[int],
    nodes: int = DEFAULT_NODES,
    mollifier: Optional[Mollifier] = None,
) -> ConvergenceReport:
    """
    Tabulate f_n(Y), Δ_x f_n(Y) and |f_n(Y) - f(Y)| for n in n_list.
    The expected limit of Δ_x f_n is the left derivative for a kernel supported
    on [0, inf) and the average of the one-sided derivatives for the even kernel.
    """
    if not f.convex:
        raise NonConvexFunctionalError(f"{f.name} is not flagged convex")
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ArgumentError("n_list must be a non-empty increasing sequence")
    mollifier = mollifier or STANDARD_MOLLIFIER
    value = f.evaluate(path)
    left, right = _left_derivative(f, path), _right_derivative(f, path)
    if mollifier.support[0] >= 0.0:
        expected = left
    elif mollifier.even:
        expected = 0.5 * (left + right)
    else:
        expected = math.nan
    report = ConvergenceReport(
        functional=f.name,
        f=value,
        left_derivative=left,
        right_derivative=right,
        expected_limit=expected,
    )
    for n in n_list:
        fn = MollifiedFunctional(f, n, nodes=nodes, mollifier=mollifier)
        f_n = fn.evaluate(path)
        report.rows.append(
            ConvergenceRow(n=n, f_n=f_n, dx_f_n=fn.h_derivative(path, 0.0, 1), gap_to_f=abs(f_n - value))
        )
    if not report.passed:
        logger.warning("convergence report for %s: %s", f.name, "; ".join(report.failures()))
    return report
