"""Tests for the identity checks and their ensemble reductions."""

import numpy as np
import pytest

from pathcalc import verify
from pathcalc.errors import ArgumentError, DomainError, NonConvexFunctionalError, UnsupportedFunctionalError
from pathcalc.functionals import (
    abs_terminal_minus,
    max_martingale_functional,
    path_independent,
    quadratic_variation,
    running_integral,
    running_max,
    running_min,
    terminal_value,
)
from pathcalc.localtime import Convention
from pathcalc.paths import Path, TimeGrid
from pathcalc.reports import VerificationReport
from pathcalc.simulate import SimSpec, simulate_path


@pytest.mark.parametrize("f", [running_integral(), quadratic_variation(), terminal_value()], ids=lambda f: f.name)
def test_functional_ito_is_exact_for_telescoping_functionals(f, brownian_path):
    """The discrete expansion reproduces f(X_t) to rounding."""
    report = verify.check_functional_ito(f, brownian_path)
    assert report.passed
    assert abs(report.residual) < 1e-9 * (1.0 + abs(report.lhs))
    assert list(report.terms) == ["f(X_0)", "time", "ito", "second_order"]


def test_functional_ito_needs_analytic_derivatives(brownian_path):
    """The running max has no second derivative, so the check refuses it."""
    with pytest.raises(UnsupportedFunctionalError):
        verify.check_functional_ito(running_max(), brownian_path)
    smooth = verify.check_functional_ito(path_independent("exp_martingale"), brownian_path)
    assert smooth.passed is None


def test_tanaka_assembly_by_hand():
    """Away from the band the residual is the crossing overshoot Σ 2|x_{j+1} - K|."""
    path = Path(TimeGrid(1.0, 2), [0.0, 0.5, 0.2])
    report = verify.check_classical_tanaka(0.3, path, epsilon=0.05, dy=0.025)
    assert report.lhs == pytest.approx(0.1)
    assert report.terms["f(X_0)"] == pytest.approx(0.3)
    assert report.terms["ito"] == pytest.approx(-0.8)
    assert report.terms["local_time"] == 0.0
    assert report.residual == pytest.approx(0.6)
    assert verify.check_classical_tanaka(0.3, path, 0.05, 0.025, tolerance=0.1).passed is False


def test_levy_reports_both_conventions(brownian_path):
    """The quarter value is half the half value; min mirrors max."""
    high = verify.check_levy_max(brownian_path)
    assert high.lhs == pytest.approx(brownian_path.running_max() - brownian_path.values[0])
    assert high.config["convention"] == "half"
    assert high.details["local_time_quarter"] == pytest.approx(0.5 * high.details["local_time_half"])
    low = verify.check_levy_min(brownian_path)
    assert low.lhs == pytest.approx(brownian_path.running_min() - brownian_path.values[0])
    assert low.terms["local_time"] <= 0.0


def test_meyer_tanaka_reduces_to_tanaka(brownian_path):
    """For |y - K| every Meyer-Tanaka term matches the classical Tanaka assembly."""
    strike = 0.1
    tanaka = verify.check_classical_tanaka(strike, brownian_path, 0.05, 0.025)
    meyer = verify.check_meyer_tanaka(abs_terminal_minus(strike), brownian_path, epsilon=0.05, dy=0.025)
    assert meyer.terms["time"] == 0.0
    assert meyer.terms["double_stieltjes"] == 0.0
    assert meyer.terms["ito"] == pytest.approx(tanaka.terms["ito"], abs=1e-12)
    assert meyer.terms["terminal_stieltjes"] == pytest.approx(tanaka.terms["local_time"], abs=1e-12)
    assert meyer.residual == pytest.approx(tanaka.residual, abs=1e-12)
    assert meyer.details["compensator_nondecreasing"]


def test_meyer_tanaka_reduces_to_levy(brownian_path):
    """For the running max shifted by itself the assembly is the Lévy identity."""
    levy = verify.check_levy_max(brownian_path, 0.05, Convention.QUARTER, 0.025)
    meyer = verify.check_meyer_tanaka(running_max(), brownian_path, shift="running_max", epsilon=0.05, dy=0.025)
    assert meyer.terms["ito"] == 0.0
    assert meyer.terms["double_stieltjes"] == 0.0
    assert meyer.terms["terminal_stieltjes"] == pytest.approx(levy.terms["local_time"], abs=1e-12)
    assert meyer.residual == pytest.approx(levy.residual, abs=1e-12)
    assert meyer.compensator_nondecreasing


def test_meyer_tanaka_argument_checks(brownian_path):
    """Non-convex functionals and malformed shifts are refused."""
    with pytest.raises(NonConvexFunctionalError):
        verify.check_meyer_tanaka(running_min(), brownian_path)
    with pytest.raises(ArgumentError):
        verify.check_meyer_tanaka(running_max(), brownian_path, shift="running_min")
    with pytest.raises(ArgumentError):
        verify.check_meyer_tanaka(running_max(), brownian_path, shift=np.zeros(3))


def test_compensator_of_abs_is_nondecreasing(brownian_path):
    """A_t = 2 L(t, K) for |y - K|: it starts at 0 and never decreases."""
    trace = verify.compensator_trace(abs_terminal_minus(0.0), brownian_path)
    assert trace[0] == 0.0
    assert np.all(np.diff(trace) >= -1e-12)


def test_occupation_checks(brownian_path):
    """Summation by parts is exact; with dy = eps/2 the local-time forms agree too."""
    running = verify.check_occupation_running_integral(brownian_path, 0.05, 0.025)
    assert running.passed
    assert abs(running.residual) < 1e-9
    assert running.details["local_time_rel_gap"] < 1e-9
    suite = verify.check_occupation_suite(brownian_path, 0.05, 0.025, names=("one",))
    assert suite.passed
    assert suite.lhs < 1e-9
    with pytest.raises(ArgumentError):
        verify.check_occupation_suite(brownian_path, names=("cosine",))


def test_occupation_functional_running_integral(brownian_path):
    """A functional that ignores the last value is integrated exactly against the field."""
    report = verify.check_occupation_functional(running_integral(), brownian_path, 0.05, 0.025)
    assert report.passed
    assert report.details["rel_gap"] < 1e-9


def test_qv_identity(brownian_path):
    """<x>_t = 2 Σ L dy under the quarter convention."""
    report = verify.check_qv_identity(brownian_path, 0.05, 0.025)
    assert report.passed
    assert report.details["rel_gap"] < 1e-9


def test_condition_h_catalogue():
    """Every ψ-built H passes; x1² and x2 fail."""
    for name, (H, expected) in verify.condition_h_catalogue().items():
        assert verify.check_condition_H(H, name=name).passed is expected, name


def test_recover_psi_on_hand_paths():
    """Left differences recover ψ(m̄) below the maximum and at it."""
    grid = TimeGrid(1.0, 4)
    f = max_martingale_functional("square")
    below = verify.check_recover_psi(f, Path(grid, [0.0, 1.5, 0.3]))
    at_peak = verify.check_recover_psi(f, Path(grid, [0.0, 0.3, 1.5]))
    assert below.passed and at_peak.passed
    assert below.lhs == pytest.approx(2.25, abs=1e-6)
    assert at_peak.lhs == pytest.approx(2.25, abs=1e-6)
    assert verify.recover_psi(max_martingale_functional("one"), Path(grid, [0.0, -0.4])) == pytest.approx(1.0)


def test_recover_psi_curve_and_ensemble(brownian_path):
    """ψ is recovered along every new maximum and across a small ensemble."""
    f = max_martingale_functional("identity")
    levels, recovered, error = verify.recover_psi_curve(f, brownian_path.prefix(200))
    assert levels.size == recovered.size >= 1
    assert error < 1e-4
    spec = SimSpec(grid=TimeGrid(1.0, 200), seed=12)
    report = verify.recover_psi_ensemble(f, spec, 5, threads=2)
    assert report.passed
    assert len(report.rows) == 5


def test_max_martingale_monte_carlo():
    """H = x is a martingale; the running max is a submartingale and fails."""
    spec = SimSpec(grid=TimeGrid(1.0, 500), seed=21)
    report = verify.check_max_martingale("one", 0.0, spec, 400, threads=2)
    assert report.passed
    assert [row["t"] for row in report.rows] == list(verify.DEFAULT_CHECKPOINTS)
    control = verify.check_max_martingale(None, 0.0, spec, 400, threads=2, H=lambda x1, x2: x2 + 0.0, label="control")
    assert control.passed is False
    assert control.config["psi"] == "control"


def test_max_martingale_argument_checks():
    """x0 must be 0 and checkpoints must lie in (0, T]."""
    spec = SimSpec(grid=TimeGrid(1.0, 50))
    with pytest.raises(ArgumentError):
        verify.check_max_martingale("one", 0.0, SimSpec(x0=1.0, grid=TimeGrid(1.0, 50)), 10)
    with pytest.raises(DomainError):
        verify.check_max_martingale("one", 0.0, spec, 10, checkpoints=(0.5, 1.5))


def test_local_martingale_condition(brownian_path):
    """y_t gives exactly 0, y_t² fails and the max-martingale stays within tolerance."""
    assert verify.check_local_martingale_condition(terminal_value(), brownian_path).lhs == 0.0
    assert not verify.check_local_martingale_condition(path_independent("square"), brownian_path).passed
    report = verify.check_local_martingale_condition(max_martingale_functional("identity"), brownian_path)
    assert report.passed
    assert set(report.details["defect_terms"]) == {"time", "terminal_stieltjes", "double_stieltjes"}


def test_increasing_functional(brownian_path):
    """The running max has a vanishing Itô integrand and a nondecreasing trace."""
    report = verify.check_increasing_functional(brownian_path)
    assert report.passed
    assert report.terms["ito"] == 0.0
    assert report.details["integrand_zero"] and report.details["trace_nondecreasing"]
    flat = verify.check_increasing_functional(Path(TimeGrid(1.0, 4), [0.2] * 5), epsilon=0.05)
    assert flat.lhs == 0.0


def test_summarize_and_refinement():
    """Ensemble means, per-path rows and the RMS criterion; refinement by factor or floor."""
    reports = [VerificationReport("x", 1.0, {"a": 0.5}), VerificationReport("x", 2.0, {"a": 1.0})]
    summary = verify.summarize("x", reports, {"paths": 2}, rms_tolerance=1.0)
    assert summary.lhs == 1.5
    assert summary.terms == {"a": 0.75}
    assert [row["residual"] for row in summary.rows] == [0.5, 1.0]
    assert summary.ensemble.rms == pytest.approx(np.sqrt(0.625))
    assert summary.passed
    assert verify.max_residual_gap(summary, summary) == 0.0
    with pytest.raises(ArgumentError):
        verify.summarize("x", [])
    assert verify.refinement_report("t", 0.2, 0.1).passed
    assert not verify.refinement_report("t", 0.1, 0.095).passed
    assert verify.refinement_report("t", 1e-12, 2e-12).passed


def test_tanaka_ensemble_rows_in_order():
    """Ensemble summaries keep one row per path in index order."""
    spec = SimSpec(grid=TimeGrid(1.0, 1000), seed=4)
    report = verify.tanaka_ensemble(spec, 4, threads=2)
    assert [row["path"] for row in report.rows] == [0, 1, 2, 3]
    assert report.config["K"] == 0.0
    assert report.config["convention"] == "quarter"


def test_running_max_mean_needs_no_drift():
    """The closed form holds for driftless ensembles only."""
    spec = SimSpec(kind="drifted_brownian", mu=0.5, grid=TimeGrid(1.0, 100))
    with pytest.raises(ArgumentError):
        verify.running_max_mean_check(spec, 10)


@pytest.mark.slow
def test_local_time_identities_at_scale():
    """Band-counted local times track Tanaka and Lévy; the half convention fits the maximum."""
    spec = SimSpec(grid=TimeGrid(1.0, 20_000), seed=2024)
    assert verify.tanaka_ensemble(spec, 50).ensemble.rms < 0.3
    study = verify.convention_study(spec, 50, kind="max")
    assert study.details["rel_rms_half"] < study.details["rel_rms_quarter"]
    assert study.details["rel_rms_half"] < 0.3
    assert verify.running_max_mean_check(SimSpec(grid=TimeGrid(1.0, 2000), seed=7), 2000).passed


def test_tanaka_above_the_band_telescopes():
    """A path that never comes within eps of K has no local time and no residual."""
    path = Path(TimeGrid(1.0, 4), [1.0, 1.3, 1.1, 1.6, 1.2])
    report = verify.check_classical_tanaka(0.5, path, epsilon=0.1, dy=0.05)
    assert report.terms["local_time"] == 0.0
    assert report.lhs == pytest.approx(0.7)
    assert abs(report.residual) < 1e-10
    far = simulate_path(SimSpec(x0=10.0, grid=TimeGrid(1.0, 1000), seed=3))
    brownian = verify.check_classical_tanaka(0.0, far, epsilon=0.05, dy=0.025)
    assert brownian.details["L(t,K)"] == 0.0
    assert abs(brownian.residual) < 1e-10


def test_occupation_running_integral_by_hand():
    """On [0, 1, 1, 2] with dt = 1 both sums enumerate to 1."""
    path = Path(TimeGrid(3.0, 3), [0.0, 1.0, 1.0, 2.0])
    report = verify.check_occupation_running_integral(path, 0.1, 0.05)
    # I = [0, 0, 1], (Δx)^2 = [1, 0, 1]; (q_N - q_{j+1}) x_j = [0, 1, 0]
    assert report.lhs == 1.0
    assert report.terms["summation_by_parts"] == 1.0
    assert report.residual == 0.0
