"""Discrete functional Itô calculus: paths, functionals, local times and pathwise identity checks."""

from .errors import PathCalcError
from .functionals import Functional, by_name
from .localtime import Convention, local_time_field
from .mollify import MollifiedFunctional, mollify
from .paths import Path, TimeGrid
from .reports import VerificationReport
from .simulate import SimSpec, simulate_path

__all__ = [
    "Convention",
    "Functional",
    "MollifiedFunctional",
    "Path",
    "PathCalcError",
    "SimSpec",
    "TimeGrid",
    "VerificationReport",
    "by_name",
    "local_time_field",
    "mollify",
    "simulate_path",
]
