from pathlib import Path

import pytest

from certsynth.bench import (DASH, EntryResult, RunResult, SuiteEntry, budget, format_table, read_suite, run_suite)
from certsynth.config import load

from conftest import needs_z3
from test_cegis import DISCRETE

SUITE = Path(__file__).resolve().parents[1] / "benchsuite"


def _entry_result(statuses, name="toy"):
    r = EntryResult(SuiteEntry(name, Path("x.yaml")), n_s=2, certificate="Lyapunov", neurons="2", activations="SQUARE")
    for i, s in enumerate(statuses):
        r.runs.append(RunResult(i, s, 1.0 + i, 0.5, 1, reverified=True if s == "VALID" else None))
    return r


def test_table_all_valid():
    table = format_table([_entry_result(["VALID"] * 10)])
    row = table.splitlines()[2].split()
    assert row[-1] == "100"
    assert row[-5:-2] == ["1.00", "5.50", "10.00"]


def test_table_no_success_uses_dash():
    table = format_table([_entry_result(["BUDGET_EXHAUSTED"] * 3)])
    row = table.splitlines()[2].split()
    assert row[-1] == "0"
    assert row[-5:-1] == [DASH] * 4


def test_unsound_result_is_not_a_success():
    r = _entry_result(["VALID"])
    r.runs[0].reverified = False
    assert r.success_rate == 0.0


def test_shipped_suite_loads():
    entries = read_suite(SUITE)
    names = {e.name for e in entries}
    assert {"cubic-lyapunov", "controller-lyapunov", "pendulum-rar", "linear-rar"} <= names
    for e in entries:
        cfg = load(e.config)
        assert budget(cfg, {}) == (100 if cfg.kind.value in ("SWA", "RAR") else 25)


@needs_z3
def test_run_suite_isolates_entry_errors(tmp_path):
    (tmp_path / "ok.yaml").write_text(DISCRETE)
    (tmp_path / "broken.yaml").write_text("SYSTEM: [x0\n")
    (tmp_path / "suite.yaml").write_text(
        "entries:\n  - {name: ok, config: ok.yaml, threshold: 100}\n  - {name: broken, config: broken.yaml}\n")
    results = run_suite(tmp_path, repeats=2)
    ok, broken = results
    assert ok.success_rate == 100.0 and ok.passed
    assert all(r.reverified for r in ok.runs)
    assert broken.error and not broken.runs
    assert "ERROR" in format_table(results)
