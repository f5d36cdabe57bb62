"""Tests for verification reports and their serialization."""

import json
import os

import numpy as np
import pytest

from pathcalc.localtime import Convention
from pathcalc.reports import (
    MAX_TRACE_SAMPLES,
    SCHEMA_VERSION,
    EnsembleStats,
    VerificationReport,
    is_nondecreasing,
    ordered_sum,
    render_csv,
    render_json,
    write_text,
)


@pytest.fixture
def report():
    return VerificationReport(
        identity="tanaka",
        lhs=0.7,
        terms={"initial": 0.1, "ito_integral": 0.2, "local_time": 0.3},
        config={"strike": 0.0},
        passed=True,
        details={"convention": Convention.QUARTER, "gap": np.float64(1e-3)},
    )


def test_ordered_sum_is_left_to_right():
    """No compensation: the sum matches naive accumulation exactly."""
    values = [1e16, 1.0, -1e16, 1.0]
    assert ordered_sum(values) == ((1e16 + 1.0) - 1e16) + 1.0


def test_residual_is_lhs_minus_ordered_terms(report):
    """rhs sums the terms in insertion order; residual = lhs - rhs."""
    assert report.rhs == ordered_sum([0.1, 0.2, 0.3])
    assert report.residual == 0.7 - report.rhs
    assert report.verdict() == "pass"
    assert VerificationReport("x", 0.0, {}).verdict() == "n/a"


def test_ensemble_stats():
    """Mean, standard error of the mean and root mean square."""
    stats = EnsembleStats.from_values([1.0, -1.0, 1.0, -1.0])
    assert stats.count == 4
    assert stats.mean == 0.0
    assert stats.rms == 1.0
    assert stats.standard_error == pytest.approx(np.std([1.0, -1.0, 1.0, -1.0], ddof=1) / 2.0)
    assert EnsembleStats.from_values([2.0]).standard_error == 0.0


def test_is_nondecreasing_tolerates_rounding():
    """Drops below the relative tolerance are ignored; real decreases are not."""
    assert is_nondecreasing([0.0, 1.0, 1.0 - 1e-14, 2.0])
    assert not is_nondecreasing([0.0, 1.0, 0.9])
    assert is_nondecreasing([3.0])


def test_to_dict_converts_numpy_and_enums(report):
    """Details come out as plain JSON types; the schema version is stamped."""
    data = report.to_dict()
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["details"] == {"convention": "quarter", "gap": 1e-3}
    assert type(data["details"]["gap"]) is float
    assert data["residual"] == report.residual
    assert "compensator" not in data
    json.dumps(data)


def test_compensator_is_thinned():
    """Long traces keep every stride-th sample plus the final value."""
    trace = np.arange(2501, dtype=np.float64)
    data = VerificationReport("levy_max", 0.0, {}, compensator=trace).to_dict()["compensator"]
    assert data["nondecreasing"] is True
    assert data["stride"] == 3
    assert data["final"] == 2500.0
    assert data["samples"][-1] == 2500.0
    assert len(data["samples"]) <= MAX_TRACE_SAMPLES + 1
    assert data["min_increment"] == 1.0


def test_render_json(report):
    """A JSON document with a timestamp and one entry per report."""
    payload = json.loads(render_json([report], generated_at="2024-01-01T00:00:00+00:00", extra={"seed": 3}))
    assert payload["generated_at"] == "2024-01-01T00:00:00+00:00"
    assert payload["seed"] == 3
    assert [r["identity"] for r in payload["reports"]] == ["tanaka"]


def test_render_csv_summary_and_rows(report):
    """Reports without rows give one summary row; reports with rows give one line per row."""
    per_path = VerificationReport(
        "tanaka_ensemble", 0.0, {}, rows=[{"path": 0, "residual": 0.5}, {"path": 1, "residual": -0.25}]
    )
    lines = render_csv([report, per_path]).splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["schema_version", "identity", "lhs"]
    assert "path" in header
    assert len(lines) == 4
    summary = dict(zip(header, lines[1].split(",")))
    assert summary["initial"] == "0.1"
    assert summary["passed"] == "True"
    assert summary["path"] == ""
    last = dict(zip(header, lines[3].split(",")))
    assert last["residual"] == "-0.25"


def test_write_text(data_dir):
    """Files are written under created parents; without a target the stream is used."""
    target = os.path.join(data_dir, "out", "report.json")
    write_text("{}\n", target)
    with open(target) as f:
        assert f.read() == "{}\n"

    class Sink:
        text = ""

        def write(self, chunk):
            Sink.text += chunk

    write_text("hello", None, Sink())
    assert Sink.text == "hello"
