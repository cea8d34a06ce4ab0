"""Benchmark runner: seeded repeats, success rate and timing table.

A suite directory holds ``suite.yaml``::

    entries:
      - name: cubic-lyapunov
        config: cubic_lyapunov.yaml
        expected: VALID
        repeats: 10        # optional, overrides the command line
        threshold: 80      # success percentage the entry is meant to reach
        time_ceiling: 120  # seconds per successful run
        substitute: false  # true when the dynamics stand in for an unprinted benchmark
"""
from __future__ import annotations

import dataclasses
import statistics
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from .certificates import TWO_FUNCTION
from .cegis import CegisConfig, ConfigError, Status, reverify, synthesise
from .config import load
from .verifier import Backend, SolverKind, Verdict

BUDGET_TWO_FUNCTION = 100
BUDGET_DEFAULT = 25
DASH = "—"


@dataclass
class SuiteEntry:
    name: str
    config: Path
    expected: str = "VALID"
    repeats: int | None = None
    threshold: float = 0.0
    time_ceiling: float = float("inf")
    substitute: bool = False


@dataclass
class RunResult:
    seed: int
    status: str
    total: float
    learn: float
    iterations: int
    reverified: bool | None = None
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status == Status.VALID.value and self.reverified is not False


@dataclass
class EntryResult:
    entry: SuiteEntry
    runs: list[RunResult] = field(default_factory=list)
    n_s: int = 0
    n_u: int = 0
    certificate: str = ""
    neurons: str = ""
    activations: str = ""
    error: str = ""

    @property
    def successes(self) -> list[RunResult]:
        return [r for r in self.runs if r.success]

    @property
    def success_rate(self) -> float:
        return 100.0 * len(self.successes) / len(self.runs) if self.runs else 0.0

    @property
    def passed(self) -> bool:
        ok = self.successes
        return (not self.error and self.success_rate >= self.entry.threshold
                and all(r.total <= self.entry.time_ceiling for r in ok))

    def to_dict(self) -> dict:
        return {
            "name": self.entry.name,
            "substitute": self.entry.substitute,
            "N_s": self.n_s,
            "N_u": self.n_u,
            "certificate": self.certificate,
            "neurons": self.neurons,
            "activations": self.activations,
            "S": self.success_rate,
            "threshold": self.entry.threshold,
            "passed": self.passed,
            "error": self.error,
            "runs": [dataclasses.asdict(r) for r in self.runs],
        }


def read_suite(directory: str | Path) -> list[SuiteEntry]:
    directory = Path(directory)
    index = directory / "suite.yaml"
    if not index.is_file():
        raise ConfigError(f"{directory}: no suite.yaml")
    raw = yaml.safe_load(index.read_text()) or {}
    entries = []
    for item in raw.get("entries", []):
        if "name" not in item or "config" not in item:
            raise ConfigError("suite entries need a name and a config")
        entries.append(SuiteEntry(
            name=str(item["name"]),
            config=directory / item["config"],
            expected=str(item.get("expected", "VALID")),
            repeats=item.get("repeats"),
            threshold=float(item.get("threshold", 0.0)),
            time_ceiling=float(item.get("time_ceiling", float("inf"))),
            substitute=bool(item.get("substitute", False)),
        ))
    return entries


def budget(cfg: CegisConfig, raw: dict) -> int:
    """Iteration budget for a bench run; an explicit CEGIS_MAX_ITERS wins."""
    if "CEGIS_MAX_ITERS" in raw:
        return cfg.max_iterations
    return BUDGET_TWO_FUNCTION if cfg.kind in TWO_FUNCTION else BUDGET_DEFAULT


def soundness_backends(cfg: CegisConfig) -> list[Backend]:
    """Backends used to re-check a VALID result: the same one, plus the other polynomial solver when it applies."""
    out = [cfg.backend]
    if cfg.backend.kind.polynomial_only:
        other = SolverKind.CVC5 if cfg.backend.kind is SolverKind.Z3 else SolverKind.Z3
        out.append(dataclasses.replace(cfg.backend, kind=other, executable=None))
    return out


def run_once(cfg: CegisConfig, seed: int) -> RunResult:
    cfg = dataclasses.replace(cfg, seed=seed)
    t0 = time.perf_counter()
    report = synthesise(cfg)
    total = time.perf_counter() - t0
    run = RunResult(seed, report.status.value, total, report.timings.get("learn", 0.0),
                    report.iterations, message=report.message)
    if report.status is Status.VALID:
        ok = True
        for backend in soundness_backends(cfg):
            results = reverify(report, cfg, backend)
            if not all(r.verdict is Verdict.UNSAT for r in results):
                ok = False
                bad = [f"{r.name}={r.verdict.value}" for r in results if r.verdict is not Verdict.UNSAT]
                run.message = f"re-verification with {backend.kind.value} failed: {', '.join(bad)}"
        run.reverified = ok
    return run


def run_entry(entry: SuiteEntry, repeats: int = 10, seeds: Sequence[int] | None = None) -> EntryResult:
    res = EntryResult(entry)
    try:
        raw = yaml.safe_load(Path(entry.config).read_text()) or {}
        cfg = load(entry.config)
        limit = entry.time_ceiling if entry.time_ceiling != float("inf") else None
        cfg = dataclasses.replace(cfg, max_iterations=budget(cfg, raw), time_limit=limit)
    except Exception as exc:  # an entry failure must not stop the suite
        res.error = f"{type(exc).__name__}: {exc}"
        return res
    res.n_s, res.n_u = cfg.model.n_vars, cfg.model.n_inputs
    res.certificate = cfg.kind.value
    shapes = [cfg.certificate] + ([cfg.alternate] if cfg.alternate else [])
    res.neurons = "/".join(",".join(map(str, s.hidden)) for s in shapes)
    res.activations = "/".join(",".join(a.label for a in s.activations) for s in shapes)
    n = entry.repeats or repeats
    for seed in (list(seeds) if seeds is not None else range(n)):
        try:
            res.runs.append(run_once(cfg, seed))
        except Exception as exc:
            res.runs.append(RunResult(seed, Status.ERROR.value, 0.0, 0.0, 0,
                                      message=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"))
    return res


def run_suite(directory: str | Path, repeats: int = 10, seeds: Sequence[int] | None = None,
              only: Sequence[str] | None = None) -> list[EntryResult]:
    entries = read_suite(directory)
    if only:
        entries = [e for e in entries if e.name in set(only)]
    return [run_entry(e, repeats, seeds) for e in entries]


def _fmt_time(values: list[float]) -> tuple[str, str, str]:
    if not values:
        return DASH, DASH, DASH
    return f"{min(values):.2f}", f"{statistics.fmean(values):.2f}", f"{max(values):.2f}"


def format_table(results: Sequence[EntryResult]) -> str:
    header = ["Benchmark", "N_s", "N_u", "Certificate", "Neurons", "Activations",
              "T min", "T mean", "T max", "learn %", "S"]
    rows = [header]
    for r in results:
        ok = r.successes
        tmin, tmean, tmax = _fmt_time([x.total for x in ok])
        share = DASH
        if ok:
            total = sum(x.total for x in ok)
            share = f"{100.0 * sum(x.learn for x in ok) / total:.0f}" if total > 0 else "0"
        name = r.entry.name + (" (substitute)" if r.entry.substitute else "")
        s = "ERROR" if r.error else f"{r.success_rate:.0f}"
        rows.append([name, str(r.n_s), str(r.n_u), r.certificate, r.neurons, r.activations,
                     tmin, tmean, tmax, share, s])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
