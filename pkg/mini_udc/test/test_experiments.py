"""
Tests for the experiment runner, CSV output and the invariant suite.
"""

import csv
import io
import json
import math
from dataclasses import replace

import pytest

from mini_udc.config import parse_config
from mini_udc.errors import InvalidInputError
from mini_udc.experiments import (
    BOUNDS_COLUMNS,
    COLUMNS,
    SCHEMA,
    SuiteSettings,
    bounds_rows,
    check_ball_margin,
    check_converse,
    check_elias,
    check_header_budgets,
    check_nml,
    check_ordering,
    check_plug_in_trend,
    check_shtarkov,
    check_t1,
    check_t2,
    rows_to_csv,
    run_experiment,
    run_invariant_suite,
)

SMALL = SuiteSettings(
    trials=10,
    nml_trials=5,
    elias_max=300,
    acceptance_draws=4_000,
    index_trials=100,
    t2_long=1,
    t2_max_n=8,
    nml_max_n=8,
    order_n=8,
)


def _config(**changes):
    doc = {
        "codecs": ["t2", "nml"],
        "p": ["0.5", "0.5"],
        "rho": [["0", "1"], ["1", "0"]],
        "d": "0.1",
        "n_grid": [8, 4],
        "trials": 20,
        "seed": 3,
    }
    doc.update(changes)
    return parse_config(json.dumps(doc))


def _read(text):
    return list(csv.DictReader(io.StringIO(text)))


# ==== experiment rows ====


@pytest.mark.unit
def test_empty_grid_gives_header_only():
    rows = run_experiment(_config(n_grid=[]))
    assert rows == []
    assert rows_to_csv(rows) == ",".join(COLUMNS) + "\n"


@pytest.mark.integration
def test_experiment_rows():
    rows = run_experiment(_config())
    assert [(r.codec, r.n) for r in rows] == [("t2", 4), ("t2", 8), ("nml", 4), ("nml", 8)]
    for r in rows:
        assert r.status == "ok" and r.schema == SCHEMA
        assert r.rd_rate == pytest.approx(math.log(2) - (-(0.1 * math.log(0.1) + 0.9 * math.log(0.9))))
        assert r.scaled_gap == pytest.approx((r.rate - r.plug_in) * r.n / math.log(r.n))
    t2 = [r for r in rows if r.codec == "t2"]
    assert all(r.ci == 0.0 and r.above_floor for r in t2), "exact t2 rates sit above the converse floor"
    assert t2[0].coefficient == 6.0


@pytest.mark.integration
def test_experiment_csv_is_deterministic():
    cfg = _config(codecs=["nml"], n_grid=[6])
    first = rows_to_csv(run_experiment(cfg))
    assert first == rows_to_csv(run_experiment(cfg))
    (row,) = _read(first)
    assert row["schema"] == SCHEMA and row["codec"] == "nml" and row["n"] == "6"
    assert float(row["ci"]) >= 0.0


@pytest.mark.integration
def test_oversized_rows_are_skipped():
    rows = run_experiment(_config(codecs=["t2"], n_grid=[24]))
    (row,) = rows
    assert row.status == "skipped"
    assert "reduce n" in row.reason
    assert math.isnan(row.rate)
    (parsed,) = _read(rows_to_csv(rows))
    assert parsed["status"] == "skipped" and parsed["rate"] == "nan"


@pytest.mark.unit
def test_bounds_rows():
    rows = bounds_rows(_config(n_grid=[8, 16]))
    assert [r.n for r in rows] == [8, 16]
    assert all(r.plug_in_gap <= 1e-12 and math.isfinite(r.c_n) for r in rows)
    header = rows_to_csv(rows, BOUNDS_COLUMNS).splitlines()[0]
    assert header == ",".join(BOUNDS_COLUMNS)


# ==== invariant suite ====


@pytest.mark.unit
def test_individual_checks_pass():
    for check in (check_t2, check_t1, check_nml, check_shtarkov, check_elias, check_header_budgets):
        result = check(SMALL, 0)
        assert result.passed, f"{result.name}: {result.detail}"


@pytest.mark.unit
def test_dropping_the_correction_is_caught():
    faulty = SuiteSettings(trials=5, faults=("drop_correction",))
    result = check_t2(faulty, 0)
    assert not result.passed
    assert ", 0 over d" not in result.detail


@pytest.mark.unit
def test_bad_elias_layout_is_caught():
    faulty = SuiteSettings(elias_max=100, faults=("bad_elias_layout",))
    result = check_elias(faulty, 0)
    assert not result.passed
    assert "prefix clashes 0" not in result.detail


@pytest.mark.unit
def test_unknown_fault_rejected():
    with pytest.raises(InvalidInputError, match="unknown faults"):
        run_invariant_suite(settings=SuiteSettings(faults=("flip_bits",)))


@pytest.mark.integration
def test_converse_floor_covers_every_codec():
    result = check_converse(_config(), SMALL, 0)
    assert result.passed, result.detail
    assert result.detail.startswith("9 rates checked")


@pytest.mark.integration
def test_nml_beats_t2_at_moderate_n():
    result = check_ordering(_config(), SMALL, 0)
    assert result.passed, result.detail
    assert result.detail.startswith("n=8: nml")


@pytest.mark.unit
def test_ordering_skips_past_the_cover_limits():
    result = check_ordering(_config(), replace(SMALL, order_n=24), 0)
    assert result.passed and result.detail.startswith("skipped at n=24")


@pytest.mark.unit
def test_long_t2_trials_are_drawn():
    result = check_t2(replace(SMALL, trials=0, t2_long=2, t2_max_n=10), 0)
    assert result.passed, result.detail
    assert result.detail.startswith("3 trials")


@pytest.mark.slow
def test_trend_checks():
    for check in (check_plug_in_trend, check_ball_margin):
        result = check(SMALL, 0)
        assert result.passed, f"{result.name}: {result.detail}"


@pytest.mark.slow
def test_suite_reports_every_check():
    report = run_invariant_suite(_config(), SMALL)
    names = [r.name for r in report.results]
    assert len(names) == 15 and names[-2:] == ["converse floor", "nml below t2"]
    assert all(line[0] in "✅❌" for line in report.lines())
    faulty = run_invariant_suite(_config(), replace(SMALL, trials=5, faults=("drop_correction",)))
    assert not faulty.passed
    assert any(name.startswith("t2") for name in faulty.failed())
