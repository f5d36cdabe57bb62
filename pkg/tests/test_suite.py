"""Tests for the acceptance suite stages at reduced sizes."""

from dataclasses import replace

import pytest

from pathcalc import suite, verify
from pathcalc.paths import TimeGrid
from pathcalc.simulate import SimSpec

TINY = replace(
    suite.QUICK_SIZES,
    exact_steps=200,
    exact_paths=2,
    determinism_steps=300,
    determinism_paths=3,
)


def by_identity(reports):
    return {report.identity: report for report in reports}


def test_exact_identities_pass():
    """Functional Itô, bump shift, reflection and the metric axioms hold exactly."""
    reports = suite.exact_identities(3, TINY, threads=2)
    assert [r.identity for r in reports] == [
        "functional_ito",
        "functional_ito",
        "bump_shift",
        "running_min_reflection",
        "metric_axioms",
    ]
    assert all(r.passed for r in reports), [r.identity for r in reports if not r.passed]


def test_meyer_tanaka_reductions_are_exact():
    """The assembled Meyer-Tanaka terms equal the Tanaka and Lévy ensembles."""
    spec = SimSpec(grid=TimeGrid(1.0, 2000), seed=17)
    tanaka = verify.tanaka_ensemble(spec, 3, epsilon=0.05, dy=0.025, threads=1)
    levy = verify.convention_study(spec, 3, 0.05, 0.025, "max", threads=1)
    assembled, vs_tanaka, vs_levy = suite.meyer_tanaka_reductions(spec, 3, 0.05, 0.025, tanaka, levy, threads=2)
    assert assembled.identity == "meyer_tanaka"
    assert vs_tanaka.passed, vs_tanaka.details
    assert vs_levy.passed, vs_levy.details
    assert vs_levy.details["compensator_nondecreasing_all"]


def test_mollification_suite():
    """Kernel mass, convergence of f_n and preserved convexity pass on the probe path."""
    reports = suite.mollification_suite(5)
    named = by_identity(reports)
    assert named["kernel_normalization"].passed
    assert named["mollified_convexity"].passed
    assert named["mollified_derivative_agreement"].lhs < 1e-5
    convergence = [r for r in reports if r.identity == "mollify_convergence"]
    assert len(convergence) == 2
    assert all(r.passed for r in convergence)


def test_expected_failures_are_flipped():
    """Negative controls count as passing when the underlying check fails."""
    catalogue = verify.condition_h_catalogue()
    report = suite._expected_failure(verify.check_condition_H(catalogue["x2"][0], name="x2"))
    assert report.passed
    assert report.details["raw_passed"] is False
    assert report.details["expected"] == "fail"


def test_determinism_across_threads():
    """Rendered ensemble reports are byte-identical for 1 and 4 workers."""
    report = suite.determinism_report(11, TINY)
    assert report.passed
    first, second = report.details["bytes"]
    assert first == second > 0


def test_local_epsilon_defaults():
    """Quick sizes tie eps to N; full sizes pin it at 0.02."""
    assert suite.FULL_SIZES.local_epsilon() == 0.02
    assert suite.QUICK_SIZES.local_epsilon() == pytest.approx(0.6 * 20_000**-0.25)


SMALL_LOCAL = replace(
    suite.QUICK_SIZES,
    local_steps=2000,
    local_paths=6,
    qv_paths=3,
    occupation_paths=2,
    mc_steps=200,
    mc_paths=200,
)

REFINED_IDENTITIES = {
    "refinement(classical_tanaka)",
    "refinement(levy_max)",
    "refinement(levy_min)",
    "refinement(qv_identity)",
    "refinement(occupation_suite)",
    "refinement(meyer_tanaka)",
}


@pytest.fixture(scope="module")
def small_local_reports():
    return suite.local_time_identities(5, SMALL_LOCAL, threads=2)


def test_local_time_identities_carry_refinement_rows(small_local_reports):
    """Every stochastic identity is followed by its refinement row."""
    reports = small_local_reports
    refinements = {r.identity: r for r in reports if r.identity.startswith("refinement(")}
    assert set(refinements) == REFINED_IDENTITIES
    for report in refinements.values():
        assert report.lhs == pytest.approx(report.details["coarse"] / report.details["fine"])
        assert report.config["factor"] == verify.REFINEMENT_FACTOR


def test_detuned_qv_run_has_a_real_gap(small_local_reports):
    """With dy = eps/2 the QV identity is exact; with 2 eps / dy not an integer it is not."""
    epsilon = SMALL_LOCAL.local_epsilon()
    reports = small_local_reports
    exact, detuned = [r for r in reports if r.identity == "qv_identity"]
    assert exact.config["dy"] == 0.5 * epsilon
    assert max(row["rel_gap"] for row in exact.rows) < 1e-9
    assert detuned.config["dy"] == pytest.approx(suite.QV_DETUNED_DY * epsilon)
    gaps = [row["rel_gap"] for row in detuned.rows]
    assert all(1e-12 < gap < 0.05 for gap in gaps), gaps
    assert detuned.passed
    refinement = by_identity(reports)["refinement(qv_identity)"]
    assert refinement.details["coarse"] > verify.REFINEMENT_FLOOR


@pytest.mark.slow
def test_refinement_shrinks_every_local_time_error():
    """Refining N by 4, with eps shrunk to match, cuts every ensemble error by at least 1.2."""
    sizes = replace(
        suite.QUICK_SIZES,
        local_steps=5000,
        local_paths=200,
        qv_paths=20,
        occupation_paths=20,
        mc_steps=1000,
        mc_paths=2000,
    )
    reports = suite.local_time_identities(2024, sizes)
    refinements = [r for r in reports if r.identity in REFINED_IDENTITIES]
    assert len(refinements) == len(REFINED_IDENTITIES)
    failed = [(r.identity, r.lhs) for r in refinements if not r.passed]
    assert not failed, failed


@pytest.mark.slow
def test_quick_suite_runs_every_stage():
    """All nine criteria report, in order, and the exact ones pass."""
    reports = suite.run_suite(2024, quick=True)
    identities = [r.identity for r in reports]
    assert identities[0] == "functional_ito"
    assert identities[-1] == "determinism"
    named = by_identity(reports)
    for identity in ("bump_shift", "running_min_reflection", "metric_axioms", "meyer_tanaka_vs_tanaka",
                     "meyer_tanaka_vs_levy", "kernel_normalization", "determinism"):
        assert named[identity].passed, identity
