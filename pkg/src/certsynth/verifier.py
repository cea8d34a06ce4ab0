"""SMT-LIB emission, solver subprocesses and counterexample extraction."""
from __future__ import annotations

import enum
import logging
import os
import re
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import expr as E
from .certificates import (
    CandidateExpressions,
    CertificateKind,
    ConstraintGroup,
    constraint_groups,
)
from .domains import Domain
from .models import DynamicalModel

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 180.0
DEFAULT_PRECISION = 1e-4
FIDELITY_TOL = 1e-6


class VerifierError(RuntimeError):
    pass


class CapabilityError(VerifierError, ValueError):
    """The expression uses an operator the chosen solver cannot decide."""


class SolverKind(str, enum.Enum):
    Z3 = "Z3"
    CVC5 = "CVC5"
    DREAL = "DREAL"

    @classmethod
    def parse(cls, name: str) -> "SolverKind":
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise VerifierError(f"unknown verifier {name!r}; expected one of Z3, CVC5, DREAL") from None

    @property
    def polynomial_only(self) -> bool:
        return self is not SolverKind.DREAL


_ENV = {SolverKind.Z3: "FOSSIL_Z3", SolverKind.CVC5: "FOSSIL_CVC5", SolverKind.DREAL: "FOSSIL_DREAL"}
_BINARY = {SolverKind.Z3: "z3", SolverKind.CVC5: "cvc5", SolverKind.DREAL: "dreal"}
_FALLBACK_MODULE = {SolverKind.CVC5: "certsynth.cvc5_driver", SolverKind.DREAL: "certsynth.icp"}


def resolve_executable(kind: SolverKind, configured: str | None = None) -> list[str]:
    """Command prefix for ``kind``: config value, environment, PATH, bundled fallback."""
    for candidate in (configured, os.environ.get(_ENV[kind])):
        if candidate:
            return [candidate]
    found = shutil.which(_BINARY[kind])
    if found:
        return [found]
    if kind in _FALLBACK_MODULE:
        return [sys.executable, "-m", _FALLBACK_MODULE[kind]]
    raise VerifierError(f"no {kind.value} executable: set {_ENV[kind]} or put {_BINARY[kind]} on PATH")


@dataclass(frozen=True)
class Backend:
    kind: SolverKind = SolverKind.Z3
    executable: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    precision: float = DEFAULT_PRECISION

    def __post_init__(self):
        object.__setattr__(self, "kind", SolverKind.parse(self.kind) if not isinstance(self.kind, SolverKind) else self.kind)

    def command(self, path: str) -> list[str]:
        prefix = resolve_executable(self.kind, self.executable)
        bundled = len(prefix) > 1
        if self.kind is SolverKind.Z3:
            return [*prefix, "-smt2", path]
        if self.kind is SolverKind.CVC5:
            return [*prefix, path] if bundled else [*prefix, "--lang=smt2", "--produce-models", path]
        return [*prefix, "--precision", repr(self.precision), "--model", path]

    @property
    def tolerance(self) -> float:
        """Slack accepted when re-checking returned points numerically."""
        return FIDELITY_TOL + (self.precision if self.kind is SolverKind.DREAL else 0.0)


# ---------------------------------------------------------------------------
# emission


def check_capability(f: E.Formula, kind: SolverKind) -> None:
    if not kind.polynomial_only:
        return
    for node in E.postorder(E.formula_exprs(f)):
        if isinstance(node, E.Call):
            text = E.print_infix(node)
            if len(text) > 60:
                text = text[:57] + "..."
            raise CapabilityError(f"{kind.value} accepts polynomial arithmetic only; offending term: {text}")


def _conjuncts(f: E.Formula) -> list[E.Formula]:
    if isinstance(f, E.And):
        return [c for a in f.args for c in _conjuncts(a)]
    return [f]


def emit_script(group: ConstraintGroup | E.Formula, n_vars: int, kind: SolverKind | str = SolverKind.Z3) -> str:
    """SMT-LIB 2 script for one group; byte-identical for identical input."""
    kind = SolverKind.parse(kind) if not isinstance(kind, SolverKind) else kind
    f = group.formula if isinstance(group, ConstraintGroup) else group
    check_capability(f, kind)
    lines = []
    if isinstance(group, ConstraintGroup):
        lines.append(f"; group {group.name}")
    lines.append("(set-logic QF_NRA)")
    decl = "(declare-const x{i} Real)" if kind.polynomial_only else "(declare-fun x{i} () Real)"
    lines += [decl.format(i=i) for i in range(n_vars)]
    defs, names = E.shared_definitions(f)
    for name, e in defs:
        lines.append(f"(define-fun {name} () Real {E.definition_to_smtlib(e, names)})")
    for c in _conjuncts(f):
        lines.append(f"(assert {E.formula_to_smtlib(c, names)})")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# results


class Verdict(str, enum.Enum):
    UNSAT = "UNSAT"
    SAT = "SAT"
    DELTA_SAT = "DELTA_SAT"
    TIMEOUT = "TIMEOUT"
    SOLVER_ERROR = "SOLVER_ERROR"


@dataclass
class GroupResult:
    name: str
    verdict: Verdict
    points: list[np.ndarray] = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""
    region: str | None = None
    discarded: int = 0

    @property
    def falsified(self) -> bool:
        return self.verdict in (Verdict.SAT, Verdict.DELTA_SAT)

    def to_dict(self) -> dict:
        return {
            "group": self.name,
            "verdict": self.verdict.value,
            "points": [p.tolist() for p in self.points],
            "wall_time": self.wall_time,
            "message": self.message,
            "discarded": self.discarded,
        }


# ---------------------------------------------------------------------------
# model parsing


def _sexprs(text: str):
    from .icp import read_sexprs

    return read_sexprs(text)


def _poly(s):
    """numpy poly1d from a z3 ``root-obj`` polynomial in ``x``."""
    if isinstance(s, str):
        if re.fullmatch(r"[A-Za-z_][\w]*", s):
            return np.poly1d([1.0, 0.0])
        return np.poly1d([float(Fraction(s))])
    head, args = s[0], [_poly(a) for a in s[1:]]
    if head == "+":
        out = args[0]
        for a in args[1:]:
            out = out + a
        return out
    if head == "-":
        return -args[0] if len(args) == 1 else args[0] - sum(args[1:], np.poly1d([0.0]))
    if head == "*":
        out = args[0]
        for a in args[1:]:
            out = out * a
        return out
    if head == "^":
        return args[0] ** int(args[1].coeffs[-1])
    raise VerifierError(f"unexpected polynomial operator {head!r}")


def model_value(s) -> float:
    """Value of a model term: decimals, ``(/ p q)``, negations, ``root-obj``."""
    if isinstance(s, str):
        return float(Fraction(s))
    head = s[0]
    if head == "-":
        vals = [model_value(a) for a in s[1:]]
        return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:])
    if head == "/":
        num, den = (Fraction(model_value_exact(a)) for a in s[1:3])
        return float(num / den)
    if head == "+":
        return sum(model_value(a) for a in s[1:])
    if head == "*":
        out = 1.0
        for a in s[1:]:
            out *= model_value(a)
        return out
    if head == "root-obj":
        p = _poly(s[1])
        k = int(s[2])
        roots = np.roots(p.coeffs)
        real = np.sort(roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots.real))].real)
        if not 1 <= k <= real.size:
            raise VerifierError(f"root-obj index {k} out of range")
        return float(real[k - 1])
    raise VerifierError(f"cannot interpret model value {s!r}")


def model_value_exact(s) -> Fraction:
    if isinstance(s, str):
        return Fraction(s)
    if s[0] == "-" and len(s) == 2:
        return -model_value_exact(s[1])
    if s[0] == "/":
        return model_value_exact(s[1]) / model_value_exact(s[2])
    return Fraction(model_value(s))


_DREAL_LINE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*:.*\[\s*([^\[\],]+?)\s*,\s*([^\[\],]+?)\s*\]\s*$")


def parse_model(text: str, n_vars: int) -> np.ndarray:
    """State vector from solver model output (missing variables default to 0)."""
    point = np.zeros(n_vars)
    found = False
    for line in text.splitlines():
        m = _DREAL_LINE.match(line)
        if m and re.fullmatch(r"x\d+", m.group(1)):
            i = int(m.group(1)[1:])
            if i < n_vars:
                lo, hi = float(m.group(2)), float(m.group(3))
                point[i] = 0.5 * (lo + hi)
                found = True
    if found:
        return point
    body = text[text.find("(") :] if "(" in text else ""
    for s in _sexprs(body) if body else []:
        entries = s if isinstance(s, list) else []
        if entries and entries[0] == "model":
            entries = entries[1:]
        for d in entries:
            if isinstance(d, list) and len(d) == 5 and d[0] == "define-fun" and re.fullmatch(r"x\d+", d[1]):
                i = int(d[1][1:])
                if i < n_vars:
                    point[i] = model_value(d[4])
    return point


def classify(stdout: str, stderr: str, returncode: int) -> tuple[Verdict, str]:
    lines = [ln.strip() for ln in stdout.splitlines() if ln.strip()]
    head = lines[0] if lines else ""
    if head == "unsat":
        return Verdict.UNSAT, ""
    if head == "sat":
        return Verdict.SAT, ""
    if head.startswith("delta-sat"):
        return Verdict.DELTA_SAT, ""
    if head == "unknown":
        return Verdict.SOLVER_ERROR, "solver answered unknown"
    detail = (stderr.strip() or stdout.strip() or f"exit code {returncode}")[:2000]
    return Verdict.SOLVER_ERROR, detail


def run(
    backend: Backend,
    script: str,
    n_vars: int,
    name: str = "group",
    log_dir: str | Path | None = None,
) -> GroupResult:
    """Run one script in a fresh solver process."""
    own_tmp = None
    if log_dir is None:
        own_tmp = tempfile.TemporaryDirectory(prefix="certsynth-")
        log_dir = own_tmp.name
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    safe = re.sub(r"[^\w.-]", "_", name)
    path = log_dir / f"{safe}.smt2"
    path.write_text(script)
    t0 = time.perf_counter()
    try:
        try:
            cmd = backend.command(str(path))
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=backend.timeout)
        except subprocess.TimeoutExpired:
            return GroupResult(name, Verdict.TIMEOUT, wall_time=time.perf_counter() - t0,
                               message=f"killed after {backend.timeout} s")
        except (OSError, VerifierError) as exc:
            return GroupResult(name, Verdict.SOLVER_ERROR, wall_time=time.perf_counter() - t0, message=str(exc))
        elapsed = time.perf_counter() - t0
        (log_dir / f"{safe}.out").write_text(proc.stdout + ("\n; stderr\n" + proc.stderr if proc.stderr else ""))
        verdict, message = classify(proc.stdout, proc.stderr, proc.returncode)
        result = GroupResult(name, verdict, wall_time=elapsed, message=message)
        if result.falsified:
            try:
                result.points = [parse_model(proc.stdout.split("\n", 1)[1] if "\n" in proc.stdout else "", n_vars)]
            except (VerifierError, ValueError, ZeroDivisionError) as exc:
                result.verdict = Verdict.SOLVER_ERROR
                result.message = f"unreadable model: {exc}"
        return result
    finally:
        if own_tmp is not None:
            own_tmp.cleanup()


# ---------------------------------------------------------------------------
# candidate verification


def fidelity_filter(result: GroupResult, group: ConstraintGroup, tol: float) -> GroupResult:
    """Keep only points at which the group formula holds numerically (within ``tol``)."""
    if not result.points:
        return result
    pts = np.vstack(result.points)
    ok = E.eval_formula(group.formula, pts, tol=tol)
    if not ok.all():
        log.warning("group %s: discarding %d spurious counterexample(s)", group.name, int((~ok).sum()))
    result.discarded = int((~ok).sum())
    result.points = [p for p, k in zip(pts, ok) if k]
    return result


def verify_groups(
    groups: Sequence[ConstraintGroup],
    n_vars: int,
    backend: Backend,
    log_dir: str | Path | None = None,
    short_circuit: bool = False,
    pool: int | None = None,
) -> list[GroupResult]:
    """Run every group (in parallel by default); results come back in group order."""
    if not groups:
        raise VerifierError("no constraint groups: malformed certificate")
    scripts = [emit_script(g, n_vars, backend.kind) for g in groups]

    def one(i):
        g = groups[i]
        res = run(backend, scripts[i], n_vars, name=g.name, log_dir=log_dir)
        res.region = g.region
        if res.falsified:
            fidelity_filter(res, g, backend.tolerance)
        return res

    if short_circuit:
        out = []
        for i in range(len(groups)):
            out.append(one(i))
            if out[-1].verdict is not Verdict.UNSAT:
                break
        return out
    workers = pool or len(groups)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        return list(ex.map(one, range(len(groups))))


def verify_candidate(
    kind: CertificateKind,
    exprs: CandidateExpressions,
    sets: Mapping[str, Domain],
    model: DynamicalModel,
    backend: Backend,
    log_dir: str | Path | None = None,
    short_circuit: bool = False,
    pool: int | None = None,
) -> list[GroupResult]:
    groups = constraint_groups(kind, exprs, sets, model, exclude_origin=backend.kind is not SolverKind.DREAL)
    return verify_groups(groups, model.n_vars, backend, log_dir, short_circuit, pool)


def all_unsat(results: Sequence[GroupResult]) -> bool:
    return bool(results) and all(r.verdict is Verdict.UNSAT for r in results)
