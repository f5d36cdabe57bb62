"""
Both sides of every pathwise identity, assembled on a sampled path or an
ensemble, with the residual lhs - rhs reported term by term.

Per-path checks return a VerificationReport whose `passed` is None unless a
tolerance is supplied. Ensemble checks reduce per-path reports in index order
and set `passed` from their documented criterion. Nothing here raises on a
property failure.

Trace conventions (see functionals): time derivatives are evaluated at the
prefixes X_j, space derivatives and the lattice g(j, y) = ∂_y^- 𝓕(Z_j, y) at the
held prefixes Z_j.
"""

import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    DomainError,
    LengthMismatchError,
    NonConvexFunctionalError,
    UnsupportedFunctionalError,
)
from .functionals import (
    Constant,
    Functional,
    PSI_CATALOGUE,
    MaxMartingaleFunctional,
    Psi,
    QuadraticVariation,
    RunningIntegral,
    TerminalValue,
    default_steps,
    get_psi,
    max_martingale_h,
    running_integral,
    running_max,
    space_derivative_est,
)
from .localtime import (
    OCCUPATION_SUITE,
    Convention,
    default_dy,
    default_epsilon,
    double_stieltjes,
    ito_integral,
    level_grid_for,
    local_time_field,
    occupation_rhs,
    occupation_row,
    qv_process,
    stieltjes_in_y,
)
from .paths import Path, hold, negate
from .reports import EnsembleStats, VerificationReport, is_nondecreasing
from .simulate import SimSpec, map_ensemble

logger = logging.getLogger(__name__)

EXACT_RTOL = 1e-9
TANAKA_RMS = 0.1
LEVY_RELATIVE_RMS = 0.10
OCCUPATION_RTOL = 0.05
QV_RTOL = 0.05
REFINEMENT_FACTOR = 1.2
# Below this an identity is exact on the grid and refinement cannot shrink it.
REFINEMENT_FLOOR = 1e-9
MARTINGALE_SE = 3.0
DEFAULT_CHECKPOINTS = (0.25, 0.5, 1.0)
CONDITION_H_STEP = 1e-4
CONDITION_H_RTOL = 1e-5
RECOVERY_H0 = 1e-5
RECOVERY_ATOL = 1e-6
RECOVERY_MAX_ERROR = 1e-4
LATTICE_TOLERANCE_FACTOR = 5.0
# E[max of a random walk sampled every dt] ≈ E[continuous max] - BETA * sigma * sqrt(dt).
DISCRETE_MAX_BETA = 0.5825971579390106

# Functionals whose discrete Itô expansion telescopes exactly.
EXACT_ITO_FUNCTIONALS = (RunningIntegral, QuadraticVariation, TerminalValue, Constant)


def _schedule(path: Path, epsilon: Optional[float], dy: Optional[float]) -> tuple[float, float]:
    epsilon = default_epsilon(path.grid.steps) if epsilon is None else float(epsilon)
    dy = default_dy(epsilon) if dy is None else float(dy)
    return epsilon, dy


def _base_config(path: Path, **extra) -> dict:
    config = {"N": path.grid.steps, "T": path.grid.horizon, "end_index": path.end_index}
    for key, value in extra.items():
        config[key] = value.label if isinstance(value, Convention) else value
    return config


def _scale(lhs: float, terms: dict) -> float:
    return 1.0 + abs(lhs) + sum(abs(v) for v in terms.values())


def _apply_tolerance(report: VerificationReport, tolerance: Optional[float]) -> VerificationReport:
    if tolerance is not None:
        report.passed = abs(report.residual) <= tolerance
        report.details["tolerance"] = tolerance
    return report


# ---------------------------------------------------------------------------
# Functional Itô formula
# ---------------------------------------------------------------------------


def check_functional_ito(f: Functional, path: Path, tolerance: Optional[float] = None) -> VerificationReport:
    """
    f(X_t) against f(X_0) + Σ Δ_t f dt + Σ Δ_x f Δx + ½ Σ Δ_xx f (Δx)².
    Functionals with an exactly telescoping expansion default to a 1e-9 relative
    tolerance.
    """
    first = "x" if f.supports("x") else "x-"
    missing = [kind for kind in ("t", first, "xx") if not f.supports(kind)]
    if missing:
        raise UnsupportedFunctionalError(
            f"{f.name} lacks analytic derivatives {', '.join(missing)} needed by the functional Itô check"
        )
    dx = path.increments
    terms = {
        "f(X_0)": f.evaluate(path.prefix(0)),
        "time": float(np.sum(f.derivative_trace("t", path))) * path.grid.dt,
        "ito": ito_integral(f.derivative_trace(first, path), path),
        "second_order": 0.5 * float(np.dot(f.derivative_trace("xx", path), dx * dx)),
    }
    lhs = f.evaluate(path)
    report = VerificationReport("functional_ito", lhs, terms, config=_base_config(path, functional=f.name))
    if tolerance is None and isinstance(f, EXACT_ITO_FUNCTIONALS):
        tolerance = EXACT_RTOL * _scale(lhs, terms)
    return _apply_tolerance(report, tolerance)


# ---------------------------------------------------------------------------
# Classical Tanaka and Lévy identities
# ---------------------------------------------------------------------------


def check_classical_tanaka(
    strike: float,
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    tolerance: Optional[float] = None,
    evaluation: str = "left",
) -> VerificationReport:
    """|x_t - K| against |x_0 - K| + Σ sgn⁻(x_j - K) Δx_j + 2 L(t, K), quarter convention."""
    epsilon, dy = _schedule(path, epsilon, dy)
    strike = float(strike)
    x = path.values
    levels = level_grid_for(path, epsilon, dy, anchor=strike)
    field = local_time_field(path, levels, epsilon, Convention.QUARTER, evaluation)
    local = field.at_level(strike)
    terms = {
        "f(X_0)": abs(float(x[0]) - strike),
        "ito": ito_integral(np.where(x[:-1] > strike, 1.0, -1.0), path),
        "local_time": 2.0 * local,
    }
    report = VerificationReport(
        "classical_tanaka",
        abs(path.last - strike),
        terms,
        config=_base_config(path, K=strike, epsilon=epsilon, dy=dy, convention=Convention.QUARTER),
        details={"L(t,K)": local},
    )
    return _apply_tolerance(report, tolerance)


def _reflected(path: Path) -> Path:
    return Path(path.grid, path.values - np.maximum.accumulate(path.values))


def check_levy_max(
    path: Path,
    epsilon: Optional[float] = None,
    convention=Convention.HALF,
    dy: Optional[float] = None,
    tolerance: Optional[float] = None,
) -> VerificationReport:
    """
    m̄_t - x_0 against the local time at 0 of x - m̄, band-counted with the clock
    d<x>. The report carries the value under both conventions.
    """
    epsilon, dy = _schedule(path, epsilon, dy)
    convention = Convention.parse(convention)
    reflected = _reflected(path)
    levels = level_grid_for(reflected, epsilon, dy, anchor=0.0)
    field = local_time_field(reflected, levels, epsilon, convention, clock=path.increments**2)
    local = field.at_level(0.0)
    values = {c.label: local * (c.value / convention.value) for c in Convention}
    report = VerificationReport(
        "levy_max",
        path.running_max() - float(path.values[0]),
        {"local_time": local},
        config=_base_config(path, epsilon=epsilon, dy=dy, convention=convention),
        details={f"local_time_{label}": value for label, value in values.items()},
    )
    return _apply_tolerance(report, tolerance)


def check_levy_min(
    path: Path,
    epsilon: Optional[float] = None,
    convention=Convention.HALF,
    dy: Optional[float] = None,
    tolerance: Optional[float] = None,
) -> VerificationReport:
    """m̲_t - x_0 = -(local time at 0 of -x - m̄(-x)); the mirror of check_levy_max on -Y."""
    mirror = check_levy_max(negate(path), epsilon, convention, dy)
    report = VerificationReport(
        "levy_min",
        -mirror.lhs,
        {"local_time": -mirror.terms["local_time"]},
        config=mirror.config,
        details={key: -value for key, value in mirror.details.items()},
    )
    return _apply_tolerance(report, tolerance)


# ---------------------------------------------------------------------------
# Functional Meyer-Tanaka formula
# ---------------------------------------------------------------------------


def _shift_values(path: Path, shift) -> Optional[np.ndarray]:
    if shift is None:
        return None
    if isinstance(shift, str):
        if shift != "running_max":
            raise ArgumentError(f"unknown shift {shift!r}; use 'running_max' or a path")
        return np.maximum.accumulate(path.values)
    if isinstance(shift, Path):
        if shift.grid != path.grid:
            raise ArgumentError("shift lives on a different time grid")
        shift = shift.values
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != path.values.shape:
        raise LengthMismatchError(f"shift has {shift.size} samples for a path of {path.values.size}")
    return shift


def _time_increments(f: Functional, path: Path) -> np.ndarray:
    """Δ_t f(X_j) dt, or the exact held increment f(Z_j) - f(X_j) when no closed form exists."""
    if f.supports("t"):
        return f.derivative_trace("t", path) * path.grid.dt
    return np.array(
        [f.evaluate(hold(path.prefix(j))) - f.evaluate(path.prefix(j)) for j in range(path.end_index)]
    )


def _left_integrand(f: Functional, path: Path) -> np.ndarray:
    if f.supports("x-"):
        return f.derivative_trace("x-", path)
    k = path.end_index
    return f.y_derivative_lattice(path, np.arange(k), path.values[:-1])


def compensator_trace(f: Functional, path: Path) -> np.ndarray:
    """A_j = 2 (f(X_j) - f(X_0) - Σ_{i<j} time_i - Σ_{i<j} Δ_x^- f Δx_i), j = 0..k."""
    values = f.value_trace(path)
    drift = np.concatenate([[0.0], np.cumsum(_time_increments(f, path))])
    ito = np.concatenate([[0.0], np.cumsum(_left_integrand(f, path) * path.increments)])
    return 2.0 * (values - values[0] - drift - ito)


def check_meyer_tanaka(
    f: Functional,
    path: Path,
    shift=None,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    convention=Convention.QUARTER,
    tolerance: Optional[float] = None,
    evaluation: str = "left",
) -> VerificationReport:
    """
    f(X_t) against

        f(X_0) + Σ time + Σ ∂_y^- 𝓕 Δx + Σ_k L(t, y_k) Δ_y g(t, ·) - Σ_{j,k} L[j][k] Δ²g

    with g(j, y) = ∂_y^- 𝓕(Z_j, y + a_j) and L the local time of x - a. Without a
    shift the level grid is anchored at f.anchor, otherwise at 0.
    """
    if not f.convex:
        raise NonConvexFunctionalError(f"{f.name} is not flagged convex; Meyer-Tanaka needs convexity")
    epsilon, dy = _schedule(path, epsilon, dy)
    convention = Convention.parse(convention)
    grid = path.grid
    a = _shift_values(path, shift)
    if a is None:
        banded, anchor = path, f.anchor
        a = np.zeros(path.values.size)
    else:
        banded, anchor = Path(grid, path.values - a), 0.0
    levels = level_grid_for(banded, epsilon, dy, anchor=anchor)
    field = local_time_field(banded, levels, epsilon, convention, evaluation, clock=path.increments**2)
    y = levels.values

    def lattice(times, level):
        index = grid.index_of(times)
        return f.y_derivative_lattice(path, index, level + a[index])

    k = path.end_index
    terminal = stieltjes_in_y(field.final(), f.y_derivative_lattice(path, k, y + a[k]), levels)
    correction = double_stieltjes(field, lattice)
    terms = {
        "f(X_0)": f.evaluate(path.prefix(0)),
        "time": float(np.sum(_time_increments(f, path))),
        "ito": ito_integral(_left_integrand(f, path), path),
        "terminal_stieltjes": terminal,
        "double_stieltjes": -correction,
    }
    compensator = compensator_trace(f, path)
    report = VerificationReport(
        "meyer_tanaka",
        f.evaluate(path),
        terms,
        config=_base_config(
            path,
            functional=f.name,
            shift="none" if shift is None else ("running_max" if isinstance(shift, str) else "path"),
            epsilon=epsilon,
            dy=dy,
            convention=convention,
            evaluation=evaluation,
        ),
        compensator=compensator,
        details={"levels": levels.count, "anchor": anchor},
    )
    report.details["compensator_nondecreasing"] = is_nondecreasing(compensator)
    return _apply_tolerance(report, tolerance)


# ---------------------------------------------------------------------------
# Occupation-time formula and the quadratic-variation identity
# ---------------------------------------------------------------------------


def check_occupation_running_integral(
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    tolerance: float = OCCUPATION_RTOL,
) -> VerificationReport:
    """
    Σ_j I_j (Δx_j)² with I_j = dt Σ_{i<j} x_i, against its summation-by-parts form
    Σ_j (q_N - q_{j+1}) x_j dt (exact) and against the local-time form
    2 Σ dy I_j ΔL[j, k] (approximate).
    """
    epsilon, dy = _schedule(path, epsilon, dy)
    x = path.values
    dt = path.grid.dt
    integral = running_integral().value_trace(path)
    q = qv_process(path).values
    dq = np.diff(q)
    lhs = float(np.dot(integral[:-1], dq))
    by_parts = float(np.dot(q[-1] - q[1:], x[:-1])) * dt
    exact_scale = float(np.dot(np.abs(integral[:-1]), dq)) + abs(by_parts)

    field = local_time_field(path, level_grid_for(path, epsilon, dy), epsilon, Convention.QUARTER)
    grid = path.grid
    local_form = occupation_rhs(lambda t, y: integral[grid.index_of(t)] + 0.0 * y, field)
    local_gap = abs(lhs - local_form)
    local_rel = local_gap / exact_scale if exact_scale > 0.0 else local_gap

    report = VerificationReport(
        "occupation_running_integral",
        lhs,
        {"summation_by_parts": by_parts},
        config=_base_config(path, epsilon=epsilon, dy=dy, convention=Convention.QUARTER),
        details={"local_time_form": local_form, "local_time_rel_gap": local_rel, "tolerance": tolerance},
    )
    exact_ok = abs(report.residual) <= EXACT_RTOL * max(exact_scale, 1.0)
    report.passed = bool(exact_ok and local_rel < tolerance)
    return report


def _replacement_pairs(f: Functional, path: Path, index: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """𝓕(X_j, y) for paired (j, y), grouped by j."""
    out = np.empty(levels.shape, dtype=np.float64)
    for j in np.unique(index):
        mask = index == j
        out[mask] = f.replaced(path.prefix(int(j)), levels[mask])
    return out


def check_occupation_functional(
    f: Functional,
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    tolerance: float = OCCUPATION_RTOL,
) -> VerificationReport:
    """Σ_j f(X_j)(Δx_j)² against 2 Σ dy 𝓕(X_j, y_k) ΔL[j, k]."""
    epsilon, dy = _schedule(path, epsilon, dy)
    grid = path.grid
    values = f.value_trace(path)[:-1]
    weights = path.increments**2
    lhs = float(np.dot(values, weights))
    scale = float(np.dot(np.abs(values), weights))
    field = local_time_field(path, level_grid_for(path, epsilon, dy, f.anchor), epsilon, Convention.QUARTER)
    rhs = occupation_rhs(lambda t, y: _replacement_pairs(f, path, grid.index_of(t), y), field)
    report = VerificationReport(
        "occupation_functional",
        lhs,
        {"local_time_form": rhs},
        config=_base_config(path, functional=f.name, epsilon=epsilon, dy=dy, convention=Convention.QUARTER),
    )
    gap = abs(report.residual)
    rel = gap / scale if scale > 0.0 else gap
    report.details.update(rel_gap=rel, tolerance=tolerance)
    report.passed = rel < tolerance
    return report


def check_occupation_suite(
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    names: Sequence[str] = ("one", "y", "y2"),
    tolerance: float = OCCUPATION_RTOL,
) -> VerificationReport:
    """Occupation formula for test functions of the suite; lhs is the largest relative gap."""
    epsilon, dy = _schedule(path, epsilon, dy)
    unknown = [name for name in names if name not in OCCUPATION_SUITE]
    if unknown:
        raise ArgumentError(f"unknown test function(s) {', '.join(unknown)}; choose from {', '.join(OCCUPATION_SUITE)}")
    field = local_time_field(path, level_grid_for(path, epsilon, dy), epsilon, Convention.QUARTER)
    rows = [occupation_row(name, OCCUPATION_SUITE[name], field) for name in names]
    worst = max(row.rel_gap for row in rows)
    return VerificationReport(
        "occupation_suite",
        worst,
        {},
        config=_base_config(path, epsilon=epsilon, dy=dy, convention=Convention.QUARTER),
        passed=worst < tolerance,
        details={"tolerance": tolerance},
        rows=[{"psi": r.psi, "lhs": r.lhs, "rhs": r.rhs, "rel_gap": r.rel_gap} for r in rows],
    )


def check_qv_identity(
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    tolerance: float = QV_RTOL,
) -> VerificationReport:
    """<x>_t against 2 Σ_k L(t, y_k) dy under the quarter convention."""
    epsilon, dy = _schedule(path, epsilon, dy)
    field = local_time_field(path, level_grid_for(path, epsilon, dy), epsilon, Convention.QUARTER)
    qv = qv_process(path).total
    report = VerificationReport(
        "qv_identity",
        qv,
        {"2*sum(L)*dy": 2.0 * dy * float(np.sum(field.final()))},
        config=_base_config(path, epsilon=epsilon, dy=dy, convention=Convention.QUARTER),
    )
    gap = abs(report.residual)
    rel = gap / qv if qv > 0.0 else gap
    report.details.update(rel_gap=rel, tolerance=tolerance)
    report.passed = rel < tolerance
    return report


# ---------------------------------------------------------------------------
# Max-martingales
# ---------------------------------------------------------------------------


def _resolve_psi(psi) -> Psi:
    return get_psi(psi) if isinstance(psi, str) else psi


def check_max_martingale(
    psi,
    h0: float,
    spec: SimSpec,
    n_paths: int,
    checkpoints: Sequence[float] = DEFAULT_CHECKPOINTS,
    threads: Optional[int] = None,
    H: Optional[Callable] = None,
    label: Optional[str] = None,
) -> VerificationReport:
    """
    Monte Carlo mean of H(x_t, m̄_t) at each checkpoint against H(0, 0); passes
    when every mean lies within 3 standard errors. `H` overrides the ψ-built
    function (used for negative controls).
    """
    if spec.x0 != 0.0:
        raise ArgumentError(f"max-martingale check needs x0 = 0, got {spec.x0}")
    if H is None:
        psi = _resolve_psi(psi)
        H = max_martingale_h(psi, h0)
        label = label or psi.name
    label = label or getattr(H, "__name__", "H")
    grid = spec.grid
    if not checkpoints:
        raise ArgumentError("need at least one checkpoint")
    for t in checkpoints:
        if not 0.0 < t <= grid.horizon * (1.0 + 1e-12):
            raise DomainError(f"checkpoint {t} outside (0, T={grid.horizon}]")
    index = np.array([grid.snap_down(t) for t in checkpoints], dtype=np.int64)
    target = float(H(0.0, 0.0))

    def sample(path: Path) -> np.ndarray:
        x = path.values
        peak = np.maximum.accumulate(x)
        return np.asarray(H(x[index], peak[index]), dtype=np.float64)

    samples = np.vstack(map_ensemble(spec, n_paths, sample, threads))
    means = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros(index.size)
    rows = []
    within = []
    for t, j, mean, err in zip(checkpoints, index, means, se):
        deviation = float(mean - target)
        if err > 0.0:
            ok = abs(deviation) < MARTINGALE_SE * err
            z = deviation / err
        else:
            ok = abs(deviation) <= EXACT_RTOL * (1.0 + abs(target))
            z = 0.0 if ok else math.inf
        within.append(ok)
        rows.append({"t": float(t), "index": int(j), "mean": float(mean), "standard_error": float(err), "z": z, "within_3se": ok})
    report = VerificationReport(
        "max_martingale",
        float(means[-1]),
        {"H(0,0)": target},
        config={
            "psi": label,
            "H0": h0,
            "kind": spec.kind,
            "N": grid.steps,
            "T": grid.horizon,
            "seed": spec.seed,
            "paths": n_paths,
            "checkpoints": [float(t) for t in checkpoints],
        },
        passed=all(within),
        ensemble=EnsembleStats.from_values(samples[:, -1] - target),
        rows=rows,
    )
    logger.info("max-martingale %s: %s", label, report.verdict())
    return report


def condition_h_catalogue(h0: float = 0.0) -> dict[str, tuple[Callable, bool]]:
    """Named H functions with the expected outcome of check_condition_H."""
    catalogue: dict[str, tuple[Callable, bool]] = {
        name: (max_martingale_h(psi, h0), True) for name, psi in PSI_CATALOGUE.items()
    }
    catalogue["x1_squared"] = (lambda x1, x2: np.asarray(x1, dtype=np.float64) ** 2, False)
    catalogue["x2"] = (lambda x1, x2: np.asarray(x2, dtype=np.float64) + 0.0, False)
    return catalogue


def check_condition_H(
    H: Callable,
    probe: Optional[Sequence[float]] = None,
    step: float = CONDITION_H_STEP,
    rtol: float = CONDITION_H_RTOL,
    name: str = "H",
) -> VerificationReport:
    """
    max |∂₁₁H(x1, x2)| over probe pairs with x1 <= x2 and max |∂₂H(z, z)| over the
    diagonal, by central differences; both must stay below rtol * scale(H).
    """
    z = np.linspace(-2.0, 2.0, 41) if probe is None else np.asarray(probe, dtype=np.float64)
    x1, x2 = np.meshgrid(z, z, indexing="ij")
    keep = x1 <= x2
    x1, x2 = x1[keep], x2[keep]
    centre = np.asarray(H(x1, x2), dtype=np.float64)
    d11 = (np.asarray(H(x1 + step, x2)) - 2.0 * centre + np.asarray(H(x1 - step, x2))) / (step * step)
    d2 = (np.asarray(H(z, z + step)) - np.asarray(H(z, z - step))) / (2.0 * step)
    scale = max(1.0, float(np.max(np.abs(centre))))
    worst11 = float(np.max(np.abs(d11)))
    worst2 = float(np.max(np.abs(d2)))
    threshold = rtol * scale
    worst = max(worst11, worst2) / scale
    return VerificationReport(
        "condition_H",
        worst,
        {},
        config={"H": name, "step": step, "rtol": rtol, "probe_points": int(z.size)},
        passed=worst11 <= threshold and worst2 <= threshold,
        details={"max_d11": worst11, "max_d2_diagonal": worst2, "scale": scale, "threshold": threshold},
    )


def recover_psi(f: MaxMartingaleFunctional, path: Path) -> float:
    """Δ_x^- f(Y) by Richardson-extrapolated left differences; equals ψ(m̄(Y))."""
    return space_derivative_est(f, path, side="left", steps=default_steps(RECOVERY_H0)).value


def check_recover_psi(f: MaxMartingaleFunctional, path: Path, atol: float = RECOVERY_ATOL) -> VerificationReport:
    estimate = space_derivative_est(f, path, side="left", steps=default_steps(RECOVERY_H0))
    expected = float(f.psi(path.running_max()))
    report = VerificationReport(
        "recover_psi",
        estimate.value,
        {"psi(max)": expected},
        config=_base_config(path, functional=f.name),
        details={"estimator_residual": estimate.residual, "running_max": path.running_max()},
    )
    return _apply_tolerance(report, estimate.residual + atol)


def recover_psi_ensemble(
    f: MaxMartingaleFunctional,
    spec: SimSpec,
    n_paths: int,
    threads: Optional[int] = None,
    max_error: float = RECOVERY_MAX_ERROR,
) -> VerificationReport:
    """check_recover_psi over an ensemble; passes when every path passes and no error reaches max_error."""
    reports = map_ensemble(spec, n_paths, lambda p: check_recover_psi(f, p), threads)
    summary = summarize("recover_psi", reports, _ensemble_config(spec, n_paths, functional=f.name))
    worst = max(abs(r.residual) for r in reports)
    summary.details.update(max_abs_error=worst, max_error=max_error)
    summary.passed = all(r.passed for r in reports) and worst < max_error
    return summary


def recover_psi_curve(f: MaxMartingaleFunctional, path: Path) -> tuple[np.ndarray, np.ndarray, float]:
    """ψ recovered at every prefix that ends at its running maximum: (levels, values, max error)."""
    x = path.values
    at_max = np.flatnonzero(x == np.maximum.accumulate(x))
    levels = x[at_max]
    recovered = np.array([recover_psi(f, path.prefix(int(j))) for j in at_max])
    error = float(np.max(np.abs(recovered - f.psi(levels)))) if at_max.size else 0.0
    return levels, recovered, error


def check_local_martingale_condition(
    f: Functional,
    path: Path,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    convention=Convention.QUARTER,
) -> VerificationReport:
    """
    Σ_{j,k} ∂_y g(j, y_k) ΔL[j, k] dy with lattice differences of g, relative to
    sup|∂_y g| · Σ dy ΔL. Passes when below 5 eps. The report also carries the
    full defect time + Σ L Δ_y g(t) - Σ L Δ²g.
    """
    epsilon, dy = _schedule(path, epsilon, dy)
    convention = Convention.parse(convention)
    grid = path.grid
    levels = level_grid_for(path, epsilon, dy, f.anchor)
    field = local_time_field(path, levels, epsilon, convention)
    y = levels.values
    coo = field.increments.tocoo()
    lower = f.y_derivative_lattice(path, coo.row, y[coo.col])
    upper = f.y_derivative_lattice(path, coo.row, y[coo.col] + dy)
    jumps = upper - lower
    statistic = float(np.sum(jumps * coo.data))
    steepest = float(np.max(np.abs(jumps))) / dy if jumps.size else 0.0
    normalizer = steepest * dy * float(np.sum(coo.data))
    relative = statistic / normalizer if normalizer > 0.0 else abs(statistic)

    k = path.end_index
    time = float(np.sum(_time_increments(f, path)))
    terminal = stieltjes_in_y(field.final(), f.y_derivative_lattice(path, k, y), levels)
    correction = double_stieltjes(field, lambda t, level: f.y_derivative_lattice(path, grid.index_of(t), level))
    tolerance = LATTICE_TOLERANCE_FACTOR * epsilon
    return VerificationReport(
        "local_martingale_condition",
        relative,
        {},
        config=_base_config(path, functional=f.name, epsilon=epsilon, dy=dy, convention=convention),
        passed=abs(relative) <= tolerance,
        details={
            "statistic": statistic,
            "normalizer": normalizer,
            "tolerance": tolerance,
            "martingale_defect": time + terminal - correction,
            "defect_terms": {"time": time, "terminal_stieltjes": terminal, "double_stieltjes": -correction},
        },
    )


def check_increasing_functional(
    path: Path,
    epsilon: Optional[float] = None,
    convention=Convention.HALF,
    dy: Optional[float] = None,
    tolerance: Optional[float] = None,
) -> VerificationReport:
    """
    The running max as an increasing functional: its Itô integrand vanishes
    identically, its trace is nondecreasing, and what remains is the Lévy identity.
    """
    f = running_max()
    integrand = f.derivative_trace("x-", path)
    trace = f.value_trace(path)
    levy = check_levy_max(path, epsilon, convention, dy, tolerance)
    integrand_zero = bool(np.all(integrand == 0.0))
    nondecreasing = bool(np.all(np.diff(trace) >= 0.0))
    passed = integrand_zero and nondecreasing and levy.passed is not False
    return VerificationReport(
        "increasing_functional",
        levy.lhs,
        {"ito": ito_integral(integrand, path), **levy.terms},
        config=levy.config,
        passed=passed,
        details={"integrand_zero": integrand_zero, "trace_nondecreasing": nondecreasing, **levy.details},
    )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


def summarize(
    identity: str,
    reports: Sequence[VerificationReport],
    config: Optional[dict] = None,
    rms_tolerance: Optional[float] = None,
) -> VerificationReport:
    """
    Reduce per-path reports in index order: lhs and terms become ensemble means,
    per-path rows are kept, and `passed` is RMS(residual) < rms_tolerance.
    """
    if not reports:
        raise ArgumentError("no reports to summarize")
    names = list(reports[0].terms)
    lhs = float(np.mean([r.lhs for r in reports]))
    terms = {name: float(np.mean([r.terms[name] for r in reports])) for name in names}
    residuals = [r.residual for r in reports]
    rows = [
        {"path": j, "lhs": r.lhs, **r.terms, "residual": r.residual, "passed": r.passed}
        for j, r in enumerate(reports)
    ]
    summary = VerificationReport(
        identity,
        lhs,
        terms,
        config=dict(config or reports[0].config),
        ensemble=EnsembleStats.from_values(residuals),
        rows=rows,
    )
    if rms_tolerance is not None:
        summary.passed = summary.ensemble.rms < rms_tolerance
        summary.details["rms_tolerance"] = rms_tolerance
    return summary


def _ensemble_config(spec: SimSpec, n_paths: int, **extra) -> dict:
    config = {
        "kind": spec.kind,
        "x0": spec.x0,
        "sigma": spec.sigma,
        "mu": spec.mu,
        "N": spec.grid.steps,
        "T": spec.grid.horizon,
        "seed": spec.seed,
        "paths": n_paths,
    }
    for key, value in extra.items():
        config[key] = value.label if isinstance(value, Convention) else value
    return config


def tanaka_ensemble(
    spec: SimSpec,
    n_paths: int,
    strike: Optional[float] = None,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    tolerance: float = TANAKA_RMS,
    threads: Optional[int] = None,
) -> VerificationReport:
    strike = spec.x0 if strike is None else float(strike)
    epsilon = default_epsilon(spec.grid.steps) if epsilon is None else float(epsilon)
    dy = default_dy(epsilon) if dy is None else float(dy)
    reports = map_ensemble(spec, n_paths, lambda p: check_classical_tanaka(strike, p, epsilon, dy), threads)
    config = _ensemble_config(spec, n_paths, K=strike, epsilon=epsilon, dy=dy, convention=Convention.QUARTER)
    return summarize("classical_tanaka", reports, config, tolerance)


def meyer_tanaka_ensemble(
    f: Functional,
    spec: SimSpec,
    n_paths: int,
    shift=None,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    convention=Convention.QUARTER,
    tolerance: Optional[float] = None,
    threads: Optional[int] = None,
) -> VerificationReport:
    epsilon = default_epsilon(spec.grid.steps) if epsilon is None else float(epsilon)
    dy = default_dy(epsilon) if dy is None else float(dy)
    convention = Convention.parse(convention)

    def run(path: Path) -> VerificationReport:
        report = check_meyer_tanaka(f, path, shift, epsilon, dy, convention)
        report.compensator = None
        return report

    reports = map_ensemble(spec, n_paths, run, threads)
    config = _ensemble_config(
        spec, n_paths, functional=f.name, shift=shift if isinstance(shift, str) else "none",
        epsilon=epsilon, dy=dy, convention=convention,
    )
    summary = summarize("meyer_tanaka", reports, config, tolerance)
    monotone = [r.details["compensator_nondecreasing"] for r in reports]
    summary.details["compensator_nondecreasing_all"] = all(monotone)
    return summary


def convention_study(
    spec: SimSpec,
    n_paths: int,
    epsilon: Optional[float] = None,
    dy: Optional[float] = None,
    kind: str = "max",
    threshold: float = LEVY_RELATIVE_RMS,
    threads: Optional[int] = None,
) -> VerificationReport:
    """
    Relative RMS error of the Lévy identity under each convention. Passes when
    exactly one convention validates; that convention is recorded as selected.
    """
    if kind not in ("max", "min"):
        raise ArgumentError(f"kind must be 'max' or 'min', got {kind!r}")
    check = check_levy_max if kind == "max" else check_levy_min
    epsilon = default_epsilon(spec.grid.steps) if epsilon is None else float(epsilon)
    dy = default_dy(epsilon) if dy is None else float(dy)
    reports = map_ensemble(spec, n_paths, lambda p: check(p, epsilon, Convention.QUARTER, dy), threads)
    lhs = np.array([r.lhs for r in reports])
    denominator = math.sqrt(float(np.mean(lhs**2)))
    rel_rms = {}
    for c in Convention:
        rhs = np.array([r.details[f"local_time_{c.label}"] for r in reports])
        error = math.sqrt(float(np.mean((rhs - lhs) ** 2)))
        rel_rms[c] = error / denominator if denominator > 0.0 else error
    validating = [c for c in Convention if rel_rms[c] < threshold]
    selected = validating[0] if len(validating) == 1 else None
    chosen = selected or Convention.HALF
    rhs_chosen = np.array([r.details[f"local_time_{chosen.label}"] for r in reports])
    rows = [
        {
            "path": j,
            "lhs": r.lhs,
            "local_time_quarter": r.details["local_time_quarter"],
            "local_time_half": r.details["local_time_half"],
        }
        for j, r in enumerate(reports)
    ]
    report = VerificationReport(
        f"levy_{kind}",
        float(np.mean(lhs)),
        {"local_time": float(np.mean(rhs_chosen))},
        config=_ensemble_config(spec, n_paths, epsilon=epsilon, dy=dy, convention=chosen),
        passed=selected is not None,
        details={
            "rel_rms_quarter": rel_rms[Convention.QUARTER],
            "rel_rms_half": rel_rms[Convention.HALF],
            "threshold": threshold,
            "validating": [c.label for c in validating],
            "selected": selected.label if selected else None,
        },
        ensemble=EnsembleStats.from_values(lhs - rhs_chosen),
        rows=rows,
    )
    if selected is None:
        logger.warning(
            "Lévy %s: %d conventions validate (quarter %.3g, half %.3g)",
            kind, len(validating), rel_rms[Convention.QUARTER], rel_rms[Convention.HALF],
        )
    else:
        logger.info("Lévy %s: convention %s selected", kind, selected.label)
    return report


def running_max_mean_check(spec: SimSpec, n_paths: int, threads: Optional[int] = None) -> VerificationReport:
    """E[m̄_T - x_0] against σ√(2T/π), shifted for discrete monitoring; 3 SE."""
    if spec.mu != 0.0:
        raise ArgumentError("running-max mean check needs a driftless ensemble")
    grid = spec.grid
    gains = np.array(map_ensemble(spec, n_paths, lambda p: p.running_max() - float(p.values[0]), threads))
    stats = EnsembleStats.from_values(gains)
    terms = {
        "continuous_mean": spec.sigma * math.sqrt(2.0 * grid.horizon / math.pi),
        "discrete_monitoring_shift": -DISCRETE_MAX_BETA * spec.sigma * math.sqrt(grid.dt),
    }
    report = VerificationReport(
        "running_max_mean",
        stats.mean,
        terms,
        config=_ensemble_config(spec, n_paths),
        ensemble=stats,
    )
    report.passed = abs(report.residual) < MARTINGALE_SE * stats.standard_error
    return report


def refinement_report(
    identity: str,
    coarse: float,
    fine: float,
    factor: float = REFINEMENT_FACTOR,
    floor: float = REFINEMENT_FLOOR,
) -> VerificationReport:
    """Passes when the error shrinks by `factor` or is already below `floor`."""
    ratio = coarse / fine if fine > 0.0 else math.inf
    return VerificationReport(
        f"refinement({identity})",
        ratio,
        {},
        config={"factor": factor, "floor": floor},
        passed=ratio >= factor or fine < floor,
        details={"coarse": coarse, "fine": fine},
    )


def max_residual_gap(first: VerificationReport, second: VerificationReport) -> float:
    """Largest per-path |residual difference| between two ensemble summaries."""
    a = np.array([row["residual"] for row in first.rows] or [first.residual])
    b = np.array([row["residual"] for row in second.rows] or [second.residual])
    if a.shape != b.shape:
        raise LengthMismatchError("reports cover different numbers of paths")
    return float(np.max(np.abs(a - b)))
