"""Tests for quadratic variation, local-time fields and the Stieltjes integrators."""

import io

import numpy as np
import pytest

from pathcalc.errors import ArgumentError, ConventionError, LengthMismatchError
from pathcalc.localtime import (
    OCCUPATION_SUITE,
    Convention,
    LevelGrid,
    default_dy,
    default_epsilon,
    double_stieltjes,
    ito_integral,
    level_grid,
    level_grid_for,
    local_time_field,
    occupation_rhs,
    occupation_row,
    qv_process,
    stieltjes_in_y,
    write_occupation_csv,
)
from pathcalc.paths import Path, TimeGrid

# Levels -1.0, -0.75, ..., 2.0
LEVELS = LevelGrid(0.0, 0.25, 13, -4)


@pytest.fixture
def zigzag():
    return Path(TimeGrid(1.0, 2), [0.0, 0.5, 0.2])


def test_convention_parse():
    """Names, numeric values and members all parse; anything else is refused."""
    assert Convention.parse("half") is Convention.HALF
    assert Convention.parse(" Quarter ") is Convention.QUARTER
    assert Convention.parse(0.5) is Convention.HALF
    assert Convention.parse(Convention.QUARTER) is Convention.QUARTER
    assert Convention.HALF.label == "half"
    with pytest.raises(ArgumentError):
        Convention.parse("third")


def test_default_band_parameters():
    """eps = max(0.02, 0.6 N^(-1/4)) and dy = eps / 2."""
    assert default_epsilon(100_000) == 0.02
    assert default_epsilon(10_000) == pytest.approx(0.06)
    assert default_dy(0.04) == 0.02


def test_level_grid_contains_anchor_exactly():
    """The anchor is a level to the last bit and the grid covers the widened range."""
    grid = level_grid(-1.0, 1.0, 0.1, 0.05, anchor=0.3)
    k = grid.index(0.3)
    assert grid.values[k] == 0.3
    assert grid.low <= -1.3
    assert grid.high >= 1.3
    with pytest.raises(ArgumentError):
        grid.index(0.31)


def test_path_level_grid_reaches_a_distant_anchor():
    """A strike outside the path range is still a level of the path's grid."""
    path = Path(TimeGrid(1.0, 3), [2.0, 2.4, 2.1, 2.3])
    grid = level_grid_for(path, 0.1, 0.05, anchor=0.5)
    assert grid.values[grid.index(0.5)] == 0.5
    assert grid.low <= 0.2 + 1e-9
    assert grid.high >= 2.7 - 1e-9


def test_level_grid_validation():
    """Levels must be uniform, increasing and at least two."""
    assert LevelGrid.from_values([0.0, 0.5, 1.0]).step == 0.5
    with pytest.raises(ArgumentError):
        LevelGrid.from_values([0.0, 0.5, 1.5])
    with pytest.raises(ArgumentError):
        LevelGrid.from_values([1.0])
    with pytest.raises(ArgumentError):
        LevelGrid(0.0, 0.0, 5)
    with pytest.raises(ArgumentError):
        level_grid(0.0, 1.0, 0.0, 0.1)


def test_qv_process_and_ito_sum(zigzag):
    """q_j accumulates squared increments; the Itô sum uses left points."""
    qv = qv_process(zigzag)
    assert qv.values.tolist() == pytest.approx([0.0, 0.25, 0.34])
    assert qv.total == pytest.approx(0.34)
    assert ito_integral([1.0, 2.0], zigzag) == pytest.approx(0.5 - 0.6)
    with pytest.raises(LengthMismatchError):
        ito_integral([1.0], zigzag)


def test_local_time_field_by_hand(zigzag):
    """Each increment deposits c/eps (Δx)^2 on the levels within eps of its left point."""
    field = local_time_field(zigzag, LEVELS, 0.25)
    first = field.values_at(1)
    assert first[LEVELS.index(-0.25)] == pytest.approx(0.25)
    assert first[LEVELS.index(0.0)] == pytest.approx(0.25)
    assert first[LEVELS.index(0.25)] == pytest.approx(0.25)
    assert first[LEVELS.index(0.5)] == 0.0
    assert field.at_level(0.25) == pytest.approx(0.34)
    assert field.at_level(0.5) == pytest.approx(0.09)
    assert field.at_level(1.0) == 0.0
    assert not field.values_at(0).any()
    assert field.dense().shape == (3, 13)
    assert field.dense()[-1] == pytest.approx(field.final())


def test_half_convention_doubles(zigzag):
    """The 1/(2 eps) field is twice the 1/(4 eps) field."""
    quarter = local_time_field(zigzag, LEVELS, 0.25)
    half = local_time_field(zigzag, LEVELS, 0.25, convention="half")
    assert half.final() == pytest.approx(2.0 * quarter.final())


def test_midpoint_evaluation(zigzag):
    """With midpoint evaluation the band is centred on (x_j + x_{j+1}) / 2."""
    field = local_time_field(zigzag, LEVELS, 0.25, evaluation="midpoint")
    assert field.at_level(0.5) == pytest.approx(0.34)
    assert field.at_level(-0.25) == 0.0


def test_field_validation(zigzag):
    """Bad eps, evaluation rule, coverage and clock length are refused."""
    with pytest.raises(ArgumentError):
        local_time_field(zigzag, LEVELS, 0.0)
    with pytest.raises(ArgumentError):
        local_time_field(zigzag, LEVELS, 0.25, evaluation="right")
    with pytest.raises(ArgumentError):
        local_time_field(zigzag, LevelGrid(0.0, 0.25, 5), 0.25)
    with pytest.raises(LengthMismatchError):
        local_time_field(zigzag, LEVELS, 0.25, clock=[1.0])
    with pytest.raises(ArgumentError):
        local_time_field(zigzag, LEVELS, 0.25).values_at(3)


def test_occupation_mass_matches_qv(brownian_path):
    """With dy = eps/2, 2 Σ_k L dy reproduces the quadratic variation."""
    eps = 0.05
    field = local_time_field(brownian_path, level_grid_for(brownian_path, eps, default_dy(eps)), eps)
    mass = field.total_mass()
    assert np.all(np.diff(mass) >= 0.0)
    assert mass[-1] == pytest.approx(qv_process(brownian_path).total, rel=1e-9)
    row = occupation_row("one", OCCUPATION_SUITE["one"], field)
    assert row.rel_gap < 1e-9


def test_occupation_needs_quarter_convention(zigzag):
    """The occupation right-hand side is defined for the quarter convention only."""
    field = local_time_field(zigzag, LEVELS, 0.25, convention=Convention.HALF)
    with pytest.raises(ConventionError):
        occupation_rhs(OCCUPATION_SUITE["one"], field)


def test_stieltjes_in_y():
    """Sums of L(y_k) against increments of g, including an indicator step."""
    row = np.arange(LEVELS.count, dtype=np.float64)
    assert stieltjes_in_y(np.ones(LEVELS.count), lambda y: y, LEVELS) == pytest.approx(3.0)
    step = lambda y: (y >= 0.5).astype(np.float64)
    assert stieltjes_in_y(row, step, LEVELS) == float(LEVELS.index(0.25))
    with pytest.raises(LengthMismatchError):
        stieltjes_in_y(row[:-1], step, LEVELS)


def test_double_stieltjes(brownian_path):
    """Zero for time-independent g; dt dy Σ L for g = t y, whatever the chunking."""
    eps = 0.1
    field = local_time_field(brownian_path.prefix(300), level_grid_for(brownian_path, eps, 0.05), eps)
    assert double_stieltjes(field, lambda t, y: np.abs(y - 0.1) + 0.0 * t) == 0.0
    expected = field.path.grid.dt * field.dy * field.dense()[:-1, :-1].sum()
    mixed = lambda t, y: t * y
    assert double_stieltjes(field, mixed) == pytest.approx(expected, rel=1e-9)
    assert double_stieltjes(field, mixed, chunk=7) == pytest.approx(expected, rel=1e-9)


def test_field_csv(zigzag):
    """Rows t,y,L for every kept time index, final time always included."""
    field = local_time_field(zigzag, LEVELS, 0.25)
    buffer = io.StringIO()
    field.to_csv(buffer, every=2)
    lines = buffer.getvalue().splitlines()
    assert lines[0] == "t,y,L"
    assert len(lines) == 1 + 2 * LEVELS.count
    assert lines[1].startswith("0.0,-1.0,")
    with pytest.raises(ArgumentError):
        field.to_csv(io.StringIO(), every=0)


def test_occupation_csv(zigzag):
    """One row per test function with the relative gap."""
    field = local_time_field(zigzag, LEVELS, 0.25)
    rows = [occupation_row(name, psi, field) for name, psi in OCCUPATION_SUITE.items()]
    buffer = io.StringIO()
    write_occupation_csv(rows, buffer)
    lines = buffer.getvalue().splitlines()
    assert lines[0] == "psi,lhs,rhs,rel_gap"
    assert [line.split(",")[0] for line in lines[1:]] == list(OCCUPATION_SUITE)
