"""Tests for the built-in functionals and the derivative estimators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcalc.errors import ArgumentError, DomainError, UnsupportedFunctionalError
from pathcalc.functionals import (
    FUNCTIONAL_NAMES,
    Functional,
    abs_terminal_minus,
    by_name,
    constant,
    continuity_probe,
    default_steps,
    eval_bumped,
    eval_replaced,
    in_running_max_set,
    max_martingale_functional,
    midpoint_convexity_probe,
    path_independent,
    quadratic_variation,
    running_integral,
    running_max,
    running_min,
    second_space_derivative_est,
    space_derivative_est,
    strong_convexity_probe,
    terminal_value,
    time_derivative_est,
)
from pathcalc.paths import Path, TimeGrid, bump, hold, negate

GRID = TimeGrid(1.0, 20)
finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)
samples = st.lists(finite, min_size=1, max_size=GRID.steps + 1)


class LastSquared(Functional):
    """Only evaluate() is defined, so every profile uses the generic fallbacks."""

    name = "last_squared"

    def evaluate(self, path):
        return path.last**2


def test_running_max_bump_profile(small_path):
    """Bumps move the last sample only: F(Y, h) = max(m̄(Y_{t-}), y_t + h)."""
    f = running_max()
    assert f.evaluate(small_path) == 0.6
    assert f.bumped(small_path, [0.3, -1.0]).tolist() == pytest.approx([0.75, 0.6])
    assert f.kinks(small_path) == pytest.approx((0.15,))
    assert eval_replaced(f, small_path, 2.0) == 2.0


def test_running_max_one_sided_derivatives():
    """At a tie with the left maximum the left derivative is 0 and the right one 1."""
    tie = Path(TimeGrid(1.0, 4), [0.0, 1.0, 0.5, 1.0])
    f = running_max()
    assert f.derivative("x-", tie) == 0.0
    assert f.derivative("x+", tie) == 1.0
    assert space_derivative_est(f, tie, side="left").value == pytest.approx(0.0, abs=1e-12)
    assert space_derivative_est(f, tie, side="right").value == pytest.approx(1.0)
    assert space_derivative_est(f, tie, side="central").value == pytest.approx(0.5)
    above = Path(TimeGrid(1.0, 4), [0.0, 1.0, 0.5, 1.2])
    assert f.derivative("x-", above) == 1.0


def test_running_max_traces(small_path):
    """Value trace is the running maximum; the held left derivative vanishes."""
    f = running_max()
    assert f.value_trace(small_path).tolist() == np.maximum.accumulate(small_path.values).tolist()
    assert not f.derivative_trace("x-", small_path).any()
    lattice = f.y_derivative_lattice(small_path, [3, 3], [0.5, 0.51])
    assert lattice.tolist() == [0.0, 1.0]


def test_in_running_max_set_counts_ties():
    """A last sample equal to the maximum is in the set."""
    grid = TimeGrid(1.0, 4)
    assert in_running_max_set(Path(grid, [0.0, 1.0, 1.0]))
    assert not in_running_max_set(Path(grid, [0.0, 1.0, 0.9]))


def test_running_min_reflection(small_path):
    """m̲(Y) = -m̄(-Y), for values, traces and bump profiles."""
    low, high = running_min(), running_max()
    assert low.evaluate(small_path) == -high.evaluate(negate(small_path))
    assert low.value_trace(small_path).tolist() == (-high.value_trace(negate(small_path))).tolist()
    xi = np.linspace(-1.0, 1.0, 9)
    assert low.bumped(small_path, xi).tolist() == (-high.bumped(negate(small_path), -xi)).tolist()


def test_running_integral_time_derivative(small_path):
    """Δ_t of the running integral is the current value, recovered along flat extensions."""
    f = running_integral()
    prefix = small_path.prefix(4)
    assert f.derivative("t", prefix) == 0.5
    assert time_derivative_est(f, prefix).value == pytest.approx(0.5, abs=1e-12)
    assert f.evaluate(small_path) == pytest.approx(0.1 * sum(small_path.values[:-1]))


def test_time_derivative_needs_room(small_path):
    """A path ending at the horizon cannot be extended."""
    with pytest.raises(DomainError):
        time_derivative_est(running_integral(), small_path)


def test_quadratic_variation_derivatives(small_path):
    """Δ_x QV = 2(y_t - y_{t-}) and Δ_xx QV = 2, analytically and by differences."""
    f = quadratic_variation()
    prefix = small_path.prefix(3)
    assert f.derivative("x", prefix) == pytest.approx(2.0 * 0.7)
    assert f.derivative("xx", prefix) == 2.0
    assert space_derivative_est(f, prefix).value == pytest.approx(1.4, abs=1e-9)
    assert second_space_derivative_est(f, prefix).value == pytest.approx(2.0, abs=1e-6)


def test_abs_terminal_minus_sign_convention():
    """The left derivative at the strike is -1."""
    grid = TimeGrid(1.0, 4)
    f = abs_terminal_minus(0.5)
    at_strike = Path(grid, [0.0, 0.5])
    assert f.derivative("x-", at_strike) == -1.0
    assert f.derivative("x+", at_strike) == 1.0
    assert f.derivative_trace("x-", Path(grid, [0.5, 0.7, 0.4])).tolist() == [-1.0, 1.0]
    assert f.anchor == 0.5


def test_path_independent_matches_estimates(brownian_path):
    """Analytic derivatives of h(t, y) agree with finite differences of the functional."""
    f = path_independent("exp_martingale")
    prefix = brownian_path.prefix(700)
    assert space_derivative_est(f, prefix).value == pytest.approx(f.derivative("x", prefix), rel=1e-8)
    assert second_space_derivative_est(f, prefix).value == pytest.approx(f.derivative("xx", prefix), rel=1e-5)
    assert time_derivative_est(f, prefix).value == pytest.approx(f.derivative("t", prefix), rel=1e-6)


def test_max_martingale_space_derivative_is_psi():
    """Δ_x f = ψ(m̄) for the max-martingale functional."""
    f = max_martingale_functional("square")
    below_peak = Path(TimeGrid(1.0, 4), [0.0, 0.8, 0.3])
    assert f.derivative("x", below_peak) == pytest.approx(0.64)
    assert space_derivative_est(f, below_peak, side="left").value == pytest.approx(0.64, abs=1e-9)


def test_generic_lattice_uses_left_differences(small_path):
    """Without a closed form, ∂_y^- 𝓕 comes from left differences of the replacement profile."""
    f = LastSquared()
    y = np.array([-1.0, 0.0, 2.0])
    lattice = f.y_derivative_lattice(small_path, [2, 2, 2], y)
    assert lattice == pytest.approx(2.0 * y, abs=1e-5)
    assert eval_bumped(f, small_path, 0.05) == pytest.approx(0.25)


def test_unsupported_derivatives(small_path):
    """Missing analytic derivatives and unknown kinds raise."""
    with pytest.raises(UnsupportedFunctionalError):
        running_max().derivative("x", small_path)
    with pytest.raises(UnsupportedFunctionalError):
        LastSquared().derivative_trace("t", small_path)
    with pytest.raises(ArgumentError):
        terminal_value().derivative("y", small_path)


def test_by_name():
    """Every command-line name builds; unknown names are argument errors."""
    for name in FUNCTIONAL_NAMES:
        assert isinstance(by_name(name), Functional)
    assert by_name("abs_terminal_minus", strike=0.25).strike == 0.25
    assert by_name("constant", value=3.0).evaluate(Path(GRID, [1.0])) == 3.0
    with pytest.raises(ArgumentError):
        by_name("running_median")


def test_estimator_steps_validation(small_path):
    """Steps must be positive and strictly decreasing."""
    assert default_steps(1.0, 3) == [1.0, 0.5, 0.25]
    with pytest.raises(ArgumentError):
        space_derivative_est(running_max(), small_path, steps=[0.1, 0.2])
    with pytest.raises(ArgumentError):
        space_derivative_est(running_max(), small_path, side="up")


def test_continuity_probe_bounded_by_radius(brownian_path):
    """The terminal value is 1-Lipschitz for d_Λ, so the probe stays within the radius."""
    worst = continuity_probe(terminal_value(), brownian_path.prefix(500), 0.1, samples=32, seed=3)
    assert 0.0 <= worst <= 0.1 + 1e-12
    with pytest.raises(ArgumentError):
        continuity_probe(running_max(), brownian_path, 0.0)


@pytest.mark.parametrize(
    "f",
    [running_max(), running_integral(), quadratic_variation(), terminal_value(), abs_terminal_minus(0.1), constant(1.0)],
    ids=lambda f: f.name,
)
def test_convex_functionals_pass_midpoint_probe(f, brownian_path):
    """Convex-flagged built-ins have convex bump profiles."""
    assert f.convex
    assert midpoint_convexity_probe(f, brownian_path.prefix(900), samples=200, seed=1).passed


def test_strong_convexity_probe(brownian_path):
    """The running max and |y - K| are convex along straight lines between paths."""
    prefix = brownian_path.prefix(300)
    assert strong_convexity_probe(running_max(), prefix, samples=50, seed=2).passed
    assert strong_convexity_probe(abs_terminal_minus(0.0), prefix, samples=50, seed=2).passed


def test_running_min_is_not_convex(small_path):
    """The running min is concave in the bump variable and fails the probe."""
    f = running_min()
    assert not f.convex
    assert not midpoint_convexity_probe(f, small_path, samples=200, seed=4).passed


def test_held_prefix_is_flat(small_path):
    """hold() adds one step at the same level without changing the functional."""
    f = running_max()
    assert f.evaluate(hold(small_path.prefix(4))) == f.evaluate(small_path.prefix(4))


@settings(max_examples=100, deadline=None)
@given(samples, finite, finite)
def test_bump_shift_identity(values, h, xi):
    """F(Y^h, ξ) = F(Y, h + ξ) for every built-in with a closed-form profile."""
    path = Path(GRID, values)
    for f in (running_max(), running_min(), quadratic_variation(), abs_terminal_minus(0.3), terminal_value()):
        shifted = f.bumped(bump(path, h), [xi])[0]
        direct = f.bumped(path, [h + xi])[0]
        assert shifted == pytest.approx(direct, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(samples, st.lists(finite, min_size=3, max_size=3))
def test_convex_flag_matches_profile(values, hs):
    """Convex-flagged functionals satisfy the midpoint inequality on random bumps."""
    path = Path(GRID, values)
    h1, h2, lam = hs[0], hs[1], (hs[2] + 5.0) / 10.0
    for f in (running_max(), quadratic_variation(), abs_terminal_minus(-0.2)):
        mid = f.bumped(path, [lam * h1 + (1.0 - lam) * h2])[0]
        chord = lam * f.bumped(path, [h1])[0] + (1.0 - lam) * f.bumped(path, [h2])[0]
        assert mid <= chord + 1e-9 * (1.0 + abs(chord))
