"""Pytest fixtures: grids, deterministic Brownian paths, a scratch directory."""

import shutil
import tempfile

import pytest

from pathcalc.paths import Path, TimeGrid
from pathcalc.simulate import SimSpec, simulate_path


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="acceptance scale; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def grid():
    return TimeGrid(1.0, 10)


@pytest.fixture
def small_path(grid):
    """A hand-written path with a repeated maximum and a dip below zero."""
    return Path(grid, [0.0, 0.3, -0.2, 0.5, 0.5, 0.1, -0.4, 0.2, 0.6, 0.4, 0.45])


@pytest.fixture
def brownian_path():
    return simulate_path(SimSpec(grid=TimeGrid(1.0, 2000), seed=11))


@pytest.fixture
def fine_brownian_path():
    return simulate_path(SimSpec(grid=TimeGrid(1.0, 20_000), seed=5))


@pytest.fixture
def data_dir():
    d = tempfile.mkdtemp(prefix="pathcalc_test_")
    yield d
    shutil.rmtree(d, ignore_errors=True)
