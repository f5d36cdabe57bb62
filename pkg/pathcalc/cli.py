"""
Command-line driver: python -m pathcalc <subcommand> [options]

Every subcommand simulates (or reads) its paths, runs one family of checks and
writes the reports as JSON or CSV to --out or stdout. Logging goes to stderr.

Exit codes: 0 when every report passes or carries no verdict, 2 when a
property fails (one `fail: <identity>: <reason>` line per failure on stderr),
1 on usage, configuration or argument errors (`error: <kind>: <reason>`).

Option sources, lowest precedence first: built-in defaults, the JSON file given
by --config (keys are the option destinations below), command-line flags. The
seed falls back to the PATHCALC_SEED environment variable.
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FilePath
from typing import Any, Callable, Optional, Sequence, TextIO

from . import suite, verify
from .errors import ConfigError, PathCalcError
from .functionals import (
    FUNCTIONAL_NAMES,
    PSI_CATALOGUE,
    TIME_SPACE_CATALOGUE,
    by_name,
    max_martingale_functional,
)
from .localtime import Convention
from .mollify import DEFAULT_NODES, STANDARD_MOLLIFIER, Mollifier, convergence_report
from .paths import Path, TimeGrid, csv_text, read_csv, write_csv
from .reports import VerificationReport, render_csv, render_json, write_text
from .simulate import KINDS, SimSpec, iter_ensemble, map_ensemble, simulate_path

logger = logging.getLogger(__name__)

SEED_ENV = "PATHCALC_SEED"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
DEFAULT_N_LIST = (2, 4, 8, 16, 32, 64, 128, 256)

# Fields describing how a run executes rather than what it computes; left out
# of the embedded configuration so reports do not depend on them.
EXECUTION_ONLY = ("threads", "out", "format", "log_level", "dump_dir", "config")

CHOICES: dict[str, tuple[str, ...]] = {
    "kind": KINDS,
    "convention": ("quarter", "half"),
    "functional": FUNCTIONAL_NAMES,
    "psi": tuple(PSI_CATALOGUE),
    "h": tuple(TIME_SPACE_CATALOGUE),
    "shift": ("none", "running_max"),
    "H": ("catalogue", "negatives") + tuple(verify.condition_h_catalogue()),
    "mollifier": ("even", "one_sided"),
    "evaluation": ("left", "midpoint"),
    "format": ("json", "csv"),
    "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}


@dataclass
class RunConfig:
    command: str
    kind: str = "brownian"
    x0: float = 0.0
    sigma: float = 1.0
    mu: float = 0.0
    horizon: float = 1.0
    steps: int = 1000
    seed: Optional[int] = None
    paths: Optional[int] = None
    epsilon: Optional[float] = None
    dy: Optional[float] = None
    convention: Optional[str] = None
    evaluation: str = "left"
    tolerance: Optional[float] = None
    functional: Optional[str] = None
    K: Optional[float] = None
    psi: str = "identity"
    h0: float = 0.0
    h: str = "square"
    value: float = 0.0
    shift: str = "none"
    checkpoints: list[float] = field(default_factory=lambda: list(verify.DEFAULT_CHECKPOINTS))
    control: bool = False
    H: str = "catalogue"
    n_list: list[int] = field(default_factory=lambda: list(DEFAULT_N_LIST))
    nodes: int = DEFAULT_NODES
    mollifier: str = "one_sided"
    path_file: Optional[str] = None
    quick: bool = False
    threads: Optional[int] = None
    format: str = "json"
    out: Optional[str] = None
    dump_dir: Optional[str] = None
    log_level: str = "WARNING"

    def validate(self) -> "RunConfig":
        for name, allowed in CHOICES.items():
            current = getattr(self, name)
            if current is not None and current not in allowed:
                raise ConfigError(f"{name} must be one of {', '.join(allowed)}, got {current!r}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.paths is not None and self.paths < 1:
            raise ConfigError(f"paths must be >= 1, got {self.paths}")
        return self

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for name in EXECUTION_ONLY:
            data.pop(name, None)
        return data

    def spec(self) -> SimSpec:
        if self.seed is None:
            raise ConfigError(f"no seed: pass --seed, set it in --config or export {SEED_ENV}")
        return SimSpec(self.kind, self.x0, self.sigma, self.mu, TimeGrid(self.horizon, self.steps), self.seed)

    @property
    def strike(self) -> float:
        return self.x0 if self.K is None else self.K

    def convention_or(self, default: Convention) -> Convention:
        return default if self.convention is None else Convention.parse(self.convention)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message} (usage: {self.format_usage().strip()})")


def _integer(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"not an integer: {value!r}")
    number = float(value)
    if not number.is_integer():
        raise ValueError(f"not an integer: {value!r}")
    return int(number)


def _boolean(value) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError(f"not a boolean: {value!r}")


def _float_list(value) -> list[float]:
    items = value.split(",") if isinstance(value, str) else value
    return [float(v) for v in items]


def _int_list(value) -> list[int]:
    items = value.split(",") if isinstance(value, str) else value
    return [_integer(v) for v in items]


CONVERTERS: dict[str, Callable[[Any], Any]] = {
    "x0": float,
    "sigma": float,
    "mu": float,
    "horizon": float,
    "steps": _integer,
    "seed": _integer,
    "paths": _integer,
    "epsilon": float,
    "dy": float,
    "tolerance": float,
    "K": float,
    "h0": float,
    "value": float,
    "nodes": _integer,
    "threads": _integer,
    "checkpoints": _float_list,
    "n_list": _int_list,
    "control": _boolean,
    "quick": _boolean,
}


def _argtype(name: str):
    convert = CONVERTERS[name]

    def parse(text: str):
        try:
            return convert(text)
        except (TypeError, ValueError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    parse.__name__ = name
    return parse


def _run_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file with option values; flags override it")
    p.add_argument("--format", choices=CHOICES["format"], help="report format (default json)")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--log-level", dest="log_level", choices=CHOICES["log_level"])
    p.add_argument("--threads", type=_argtype("threads"), help="worker threads (default: all cores)")
    p.add_argument("--dump-dir", dest="dump_dir", help="also write the simulated path(s) here as CSV")
    return p


def _sim_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--kind", choices=CHOICES["kind"])
    p.add_argument("--x0", type=_argtype("x0"))
    p.add_argument("--sigma", type=_argtype("sigma"))
    p.add_argument("--mu", type=_argtype("mu"))
    p.add_argument("--horizon", "--T", dest="horizon", type=_argtype("horizon"))
    p.add_argument("--steps", "--N", dest="steps", type=_argtype("steps"))
    p.add_argument("--seed", type=_argtype("seed"), help=f"fallback: ${SEED_ENV}")
    p.add_argument("--paths", type=_argtype("paths"), help="ensemble size; 1 checks a single path")
    p.add_argument("--path", dest="path_file", help="read a single path from CSV instead of simulating")
    return p


def _band_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--epsilon", type=_argtype("epsilon"), help="band half-width (default max(0.02, 0.6 N^-1/4))")
    p.add_argument("--dy", type=_argtype("dy"), help="level spacing (default epsilon/2)")
    p.add_argument("--convention", choices=CHOICES["convention"])
    p.add_argument("--evaluation", choices=CHOICES["evaluation"])
    return p


def _functional_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--functional", choices=CHOICES["functional"])
    p.add_argument("--K", dest="K", type=_argtype("K"), help="strike of abs_terminal_minus (default x0)")
    p.add_argument("--h", dest="h", choices=CHOICES["h"], help="h(t, y) of path_independent")
    p.add_argument("--value", type=_argtype("value"), help="value of constant")
    return p


def _psi_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--psi", choices=CHOICES["psi"])
    p.add_argument("--h0", type=_argtype("h0"), help="H(0, 0)")
    return p


def _tolerance_option() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--tolerance", type=_argtype("tolerance"))
    return p


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="pathcalc", description="Numerical checks of functional Itô calculus identities.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    run, sim, band = _run_options(), _sim_options(), _band_options()
    fun, psi, tol = _functional_options(), _psi_options(), _tolerance_option()
    layout = {
        "simulate": ([run, sim], "simulate path(s) and write t,value CSV"),
        "ito": ([run, sim, fun, tol], "functional Itô formula for smooth functionals"),
        "tanaka": ([run, sim, band, tol, fun], "classical Tanaka formula for |x - K|"),
        "levy": ([run, sim, band, tol], "pathwise Lévy identity for the running maximum"),
        "levy-min": ([run, sim, band, tol], "pathwise Lévy identity for the running minimum"),
        "meyer-tanaka": ([run, sim, band, fun, psi, tol], "functional Meyer-Tanaka formula"),
        "occupation": ([run, sim, band, fun, psi, tol], "occupation-time formula"),
        "qv-identity": ([run, sim, band, tol], "quadratic variation against the local-time mass"),
        "maxmart": ([run, sim, psi], "Monte Carlo martingale test of H(x, max)"),
        "condition-h": ([run], "second-order conditions on H"),
        "recover-psi": ([run, sim, psi], "recover psi from the left space derivative"),
        "mollify-report": ([run, sim, fun, psi], "convergence of mollified functionals"),
        "all": ([run], "the acceptance suite"),
    }
    commands: dict[str, argparse.ArgumentParser] = {}
    for name, (parents, text) in layout.items():
        commands[name] = sub.add_parser(name, parents=parents, help=text, argument_default=argparse.SUPPRESS)
    commands["meyer-tanaka"].add_argument("--shift", choices=CHOICES["shift"])
    commands["maxmart"].add_argument("--checkpoints", type=_argtype("checkpoints"), help="comma-separated times")
    commands["maxmart"].add_argument("--control", action="store_true", help="use the negative control H = x2")
    commands["condition-h"].add_argument("--H", dest="H", choices=CHOICES["H"])
    commands["mollify-report"].add_argument("--n-list", dest="n_list", type=_argtype("n_list"))
    commands["mollify-report"].add_argument("--nodes", type=_argtype("nodes"))
    commands["mollify-report"].add_argument("--mollifier", choices=CHOICES["mollifier"])
    commands["all"].add_argument("--seed", type=_argtype("seed"), help=f"fallback: ${SEED_ENV}")
    commands["all"].add_argument("--quick", action="store_true", help="unit-test scale")
    return parser, commands


def _read_config_file(location: str) -> dict[str, Any]:
    try:
        with open(location, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {location}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {location} is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {location} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"command"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {}
    for key, value in data.items():
        if value is None or key not in CONVERTERS:
            values[key] = value
            continue
        try:
            values[key] = CONVERTERS[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key}: {exc}") from exc
    return values


def _env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return _integer(raw.strip())
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def load_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    parser, _ = build_parser()
    flags = vars(parser.parse_args(argv))
    merged: dict[str, Any] = {}
    location = flags.pop("config", None)
    if location is not None:
        merged.update(_read_config_file(location))
    merged.update(flags)
    if merged.get("seed") is None:
        merged["seed"] = _env_seed()
    return RunConfig(**merged).validate()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _single_path(config: RunConfig) -> Path:
    if config.path_file is not None:
        return read_csv(config.path_file)
    path = simulate_path(config.spec())
    if config.dump_dir is not None:
        write_csv(path, FilePath(config.dump_dir) / "path.csv")
    return path


def _ensemble_size(config: RunConfig, default: int = 1) -> int:
    return default if config.paths is None else config.paths


def _functional(config: RunConfig, default: str):
    return by_name(
        config.functional or default,
        strike=config.strike,
        psi=config.psi,
        h0=config.h0,
        h=config.h,
        value=config.value,
    )


def cmd_simulate(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    n = _ensemble_size(config)
    spec = config.spec()
    if n == 1:
        path = simulate_path(spec)
        if config.dump_dir is not None:
            write_csv(path, FilePath(config.dump_dir) / "path.csv")
        write_text(csv_text(path), config.out, stdout)
        return []
    directory = FilePath(config.dump_dir or config.out or "paths")
    for j, path in enumerate(iter_ensemble(spec, n, config.threads)):
        write_csv(path, directory / f"path_{j:05d}.csv")
    logger.info("wrote %d paths to %s", n, directory)
    return []


def cmd_ito(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    f = _functional(config, "quadratic_variation")
    tolerance = config.tolerance
    if tolerance is None and not isinstance(f, verify.EXACT_ITO_FUNCTIONALS):
        tolerance = 10.0 * math.sqrt(config.horizon / config.steps)
    n = _ensemble_size(config)
    if n == 1:
        return [verify.check_functional_ito(f, _single_path(config), tolerance)]
    reports = map_ensemble(config.spec(), n, lambda p: verify.check_functional_ito(f, p, tolerance), config.threads)
    summary = verify.summarize("functional_ito", reports, config.to_dict())
    summary.passed = all(r.passed is not False for r in reports)
    return [summary]


def cmd_tanaka(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    n = _ensemble_size(config)
    if n == 1:
        path = _single_path(config)
        strike = float(path.values[0]) if config.K is None and config.path_file else config.strike
        return [
            verify.check_classical_tanaka(
                strike, path, config.epsilon, config.dy, config.tolerance, config.evaluation
            )
        ]
    return [
        verify.tanaka_ensemble(
            config.spec(),
            n,
            config.strike,
            config.epsilon,
            config.dy,
            config.tolerance if config.tolerance is not None else verify.TANAKA_RMS,
            config.threads,
        )
    ]


def _levy(config: RunConfig, kind: str) -> list[VerificationReport]:
    n = _ensemble_size(config)
    if n == 1:
        check = verify.check_levy_max if kind == "max" else verify.check_levy_min
        return [
            check(
                _single_path(config),
                config.epsilon,
                config.convention_or(Convention.HALF),
                config.dy,
                config.tolerance,
            )
        ]
    threshold = config.tolerance if config.tolerance is not None else verify.LEVY_RELATIVE_RMS
    return [verify.convention_study(config.spec(), n, config.epsilon, config.dy, kind, threshold, config.threads)]


def cmd_levy(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    return _levy(config, "max")


def cmd_levy_min(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    return _levy(config, "min")


def cmd_meyer_tanaka(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    f = _functional(config, "abs_terminal_minus")
    shift = None if config.shift == "none" else config.shift
    convention = config.convention_or(Convention.QUARTER)
    n = _ensemble_size(config)
    if n == 1:
        return [
            verify.check_meyer_tanaka(
                f, _single_path(config), shift, config.epsilon, config.dy, convention,
                config.tolerance, config.evaluation,
            )
        ]
    return [
        verify.meyer_tanaka_ensemble(
            f, config.spec(), n, shift, config.epsilon, config.dy, convention, config.tolerance, config.threads
        )
    ]


def cmd_occupation(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    path = _single_path(config)
    tolerance = config.tolerance if config.tolerance is not None else verify.OCCUPATION_RTOL
    reports = [
        verify.check_occupation_running_integral(path, config.epsilon, config.dy, tolerance),
        verify.check_occupation_suite(path, config.epsilon, config.dy, tolerance=tolerance),
    ]
    if config.functional is not None:
        f = _functional(config, config.functional)
        reports.append(verify.check_occupation_functional(f, path, config.epsilon, config.dy, tolerance))
    return reports


def cmd_qv_identity(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    tolerance = config.tolerance if config.tolerance is not None else verify.QV_RTOL
    n = _ensemble_size(config)
    if n == 1:
        return [verify.check_qv_identity(_single_path(config), config.epsilon, config.dy, tolerance)]
    reports = map_ensemble(
        config.spec(), n, lambda p: verify.check_qv_identity(p, config.epsilon, config.dy, tolerance), config.threads
    )
    summary = verify.summarize("qv_identity", reports, config.to_dict())
    summary.passed = all(r.passed for r in reports)
    return [summary]


def cmd_maxmart(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    spec = config.spec()
    n = _ensemble_size(config, 10_000)
    if config.control:
        report = verify.check_max_martingale(
            None, 0.0, spec, n, config.checkpoints, config.threads,
            H=lambda x1, x2: x2 + 0.0, label="running_max_control",
        )
    else:
        report = verify.check_max_martingale(config.psi, config.h0, spec, n, config.checkpoints, config.threads)
    report.config = {**config.to_dict(), **report.config}
    return [report]


def cmd_condition_h(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    catalogue = verify.condition_h_catalogue(config.h0)
    if config.H == "catalogue":
        names = [name for name, (_, expected) in catalogue.items() if expected]
    elif config.H == "negatives":
        names = [name for name, (_, expected) in catalogue.items() if not expected]
    else:
        names = [config.H]
    return [verify.check_condition_H(catalogue[name][0], name=name) for name in names]


def cmd_recover_psi(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    f = max_martingale_functional(config.psi, config.h0)
    n = _ensemble_size(config, 50)
    if config.path_file is not None:
        return [verify.check_recover_psi(f, read_csv(config.path_file))]
    report = verify.recover_psi_ensemble(f, config.spec(), n, config.threads)
    report.config = {**config.to_dict(), **report.config}
    return [report]


def cmd_mollify_report(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    f = _functional(config, "running_max")
    mollifier = STANDARD_MOLLIFIER if config.mollifier == "even" else Mollifier.one_sided()
    report = convergence_report(f, _single_path(config), config.n_list, config.nodes, mollifier)
    result = report.to_verification_report()
    result.config = {**config.to_dict(), **result.config}
    return [result]


def cmd_all(config: RunConfig, stdout: TextIO) -> list[VerificationReport]:
    if config.seed is None:
        raise ConfigError(f"no seed: pass --seed, set it in --config or export {SEED_ENV}")
    return suite.run_suite(config.seed, quick=config.quick, threads=config.threads)


COMMANDS: dict[str, Callable[[RunConfig, TextIO], list[VerificationReport]]] = {
    "simulate": cmd_simulate,
    "ito": cmd_ito,
    "tanaka": cmd_tanaka,
    "levy": cmd_levy,
    "levy-min": cmd_levy_min,
    "meyer-tanaka": cmd_meyer_tanaka,
    "occupation": cmd_occupation,
    "qv-identity": cmd_qv_identity,
    "maxmart": cmd_maxmart,
    "condition-h": cmd_condition_h,
    "recover-psi": cmd_recover_psi,
    "mollify-report": cmd_mollify_report,
    "all": cmd_all,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def failure_reason(report: VerificationReport) -> str:
    parts = [f"residual={report.residual:.6g}"]
    if report.ensemble is not None:
        parts.append(f"rms={report.ensemble.rms:.6g}")
        parts.append(f"se={report.ensemble.standard_error:.6g}")
    for key in ("tolerance", "rms_tolerance", "threshold", "rel_gap"):
        if key in report.details:
            parts.append(f"{key}={report.details[key]:.6g}")
    for reason in report.details.get("failures", []):
        parts.append(reason)
    return " ".join(" ".join(str(p).split()) for p in parts)


def _configure_logging(level: str, stream: TextIO) -> None:
    logging.basicConfig(level=getattr(logging, level), stream=stream, format=LOG_FORMAT, force=True)


def _emit(config: RunConfig, reports: list[VerificationReport], stdout: TextIO) -> None:
    if not reports:
        return
    if config.format == "csv":
        text = render_csv(reports)
    else:
        text = render_json(reports, extra={"run_config": config.to_dict()})
    write_text(text, config.out, stdout)


def run(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    try:
        config = load_config(argv)
        _configure_logging(config.log_level, stderr)
        logger.info("running %s", config.command)
        reports = COMMANDS[config.command](config, stdout)
        _emit(config, reports, stdout)
    except PathCalcError as exc:
        stderr.write(f"error: {exc.one_line()}\n")
        return 1
    except OSError as exc:
        stderr.write(f"error: io: {exc}\n")
        return 1
    failures = [r for r in reports if r.passed is False]
    for report in failures:
        logger.warning("%s failed", report.identity)
        stderr.write(f"fail: {report.identity}: {failure_reason(report)}\n")
    return 2 if failures else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
