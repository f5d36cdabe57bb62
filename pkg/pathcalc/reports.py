"""
Verification reports and their JSON / CSV serialization.

A report lists the right-hand-side terms of an identity in assembly order; rhs
is their left-to-right float sum and residual = lhs - rhs, so a reader summing
the serialized terms in order reproduces the serialized residual exactly.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path as FilePath
from typing import Any, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# Compensator traces are thinned to at most this many samples when serialized.
MAX_TRACE_SAMPLES = 1000
MONOTONE_RTOL = 1e-12


def ordered_sum(values) -> float:
    """Plain left-to-right float sum (no compensation)."""
    total = 0.0
    for value in values:
        total = total + float(value)
    return total


@dataclass
class EnsembleStats:
    count: int
    mean: float
    standard_error: float
    rms: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "EnsembleStats":
        values = np.asarray(values, dtype=np.float64)
        count = int(values.size)
        mean = float(np.mean(values)) if count else math.nan
        se = float(np.std(values, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
        rms = float(np.sqrt(np.mean(values**2))) if count else math.nan
        return cls(count, mean, se, rms)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "standard_error": self.standard_error,
            "rms": self.rms,
        }


def is_nondecreasing(trace: Sequence[float], rtol: float = MONOTONE_RTOL) -> bool:
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size < 2:
        return True
    scale = 1.0 + float(np.max(np.abs(trace)))
    return bool(np.all(np.diff(trace) >= -rtol * scale))


@dataclass
class VerificationReport:
    identity: str
    lhs: float
    terms: dict[str, float]
    config: dict[str, Any] = field(default_factory=dict)
    passed: Optional[bool] = None
    details: dict[str, Any] = field(default_factory=dict)
    compensator: Optional[np.ndarray] = None
    ensemble: Optional[EnsembleStats] = None
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def rhs(self) -> float:
        return ordered_sum(self.terms.values())

    @property
    def residual(self) -> float:
        return float(self.lhs) - self.rhs

    @property
    def compensator_nondecreasing(self) -> Optional[bool]:
        if self.compensator is None:
            return None
        return is_nondecreasing(self.compensator)

    def verdict(self) -> str:
        if self.passed is None:
            return "n/a"
        return "pass" if self.passed else "fail"

    def _compensator_dict(self) -> Optional[dict]:
        if self.compensator is None:
            return None
        trace = np.asarray(self.compensator, dtype=np.float64)
        stride = max(1, math.ceil(trace.size / MAX_TRACE_SAMPLES))
        samples = trace[::stride]
        if samples[-1] != trace[-1] or (trace.size - 1) % stride:
            samples = np.append(samples, trace[-1])
        return {
            "nondecreasing": self.compensator_nondecreasing,
            "min_increment": float(np.min(np.diff(trace))) if trace.size > 1 else 0.0,
            "final": float(trace[-1]),
            "stride": stride,
            "samples": samples.tolist(),
        }

    def to_dict(self) -> dict:
        data = {
            "schema_version": SCHEMA_VERSION,
            "identity": self.identity,
            "lhs": float(self.lhs),
            "terms": {k: float(v) for k, v in self.terms.items()},
            "rhs": self.rhs,
            "residual": self.residual,
            "passed": self.passed,
            "config": self.config,
            "details": _plain(self.details),
        }
        if self.ensemble is not None:
            data["ensemble"] = self.ensemble.to_dict()
        compensator = self._compensator_dict()
        if compensator is not None:
            data["compensator"] = compensator
        if self.rows:
            data["rows"] = _plain(self.rows)
        return data

    def summary_row(self) -> dict[str, Any]:
        row = {"identity": self.identity, "lhs": float(self.lhs)}
        row.update({k: float(v) for k, v in self.terms.items()})
        row.update(rhs=self.rhs, residual=self.residual, passed=self.passed)
        return row


def _plain(value):
    """Convert numpy scalars/arrays and enums nested in dicts and lists to JSON types."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "label") and hasattr(value, "value"):
        return value.label
    return value


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def render_json(reports: Sequence[VerificationReport], generated_at: Optional[str] = None, extra: Optional[dict] = None) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "generated_at": generated_at if generated_at is not None else timestamp(),
    }
    if extra:
        payload.update(_plain(extra))
    payload["reports"] = [r.to_dict() for r in reports]
    return json.dumps(payload, indent=2) + "\n"


def render_csv(reports: Sequence[VerificationReport]) -> str:
    """
    One row per path or checkpoint when a report carries rows, else one summary
    row per report. Columns are the union of keys in first-seen order.
    """
    records: list[dict[str, Any]] = []
    for report in reports:
        if report.rows:
            for row in report.rows:
                records.append({"identity": report.identity, **_plain(row)})
        else:
            records.append(report.summary_row())
    columns: list[str] = ["schema_version"]
    for record in records:
        for key in record:
            if key not in columns:
                columns.append(key)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow({"schema_version": SCHEMA_VERSION, **{k: _cell(v) for k, v in record.items()}})
    return buffer.getvalue()


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_text(text: str, target: Union[str, FilePath, None], stream: Optional[io.TextIOBase] = None) -> None:
    """Write to a file path, or to `stream` (stdout in the CLI) when no path is given."""
    if target is None:
        if stream is not None:
            stream.write(text)
        return
    target = FilePath(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info("wrote %s", target)
