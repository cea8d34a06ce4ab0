"""Counterexample-guided synthesis loop: train, freeze, verify, enrich."""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from . import expr as E
from .certificates import (
    LEVELS,
    TWO_FUNCTION,
    Candidate,
    CandidateExpressions,
    CertificateError,
    CertificateKind,
    Region,
    check_sets,
    check_time_domain,
    primary_bias,
    regions,
    stability_type,
)
from .domains import Domain, DomainError
from .learner import Learner, TrainConfig
from .models import DynamicalModel, ModelError
from .nnet import Activation, Network, NetworkError, TrainingError
from .verifier import Backend, GroupResult, SolverKind, Verdict, VerifierError, all_unsat, verify_candidate

log = logging.getLogger(__name__)

N_NEIGHBOURS = 50
NEIGHBOUR_SCALE = 0.05
DEFAULT_N_DATA = 1000


class Status(str, enum.Enum):
    VALID = "VALID"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"
    ERROR = "ERROR"
    UNVERIFIED = "UNVERIFIED"
    FALSIFIED = "FALSIFIED"  # verification-only run that found a counterexample


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetShape:
    hidden: tuple[int, ...]
    activations: tuple[Activation, ...]

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "activations", tuple(self.activations))
        if not self.hidden:
            raise ConfigError("network shape needs at least one hidden layer")
        if any(h <= 0 for h in self.hidden):
            raise ConfigError("hidden layer widths must be positive")
        if len(self.hidden) != len(self.activations):
            raise ConfigError(f"{len(self.hidden)} hidden layers but {len(self.activations)} activations")


@dataclass
class CegisConfig:
    model: DynamicalModel
    kind: CertificateKind
    sets: Mapping[str, Domain]
    certificate: NetShape
    n_data: Mapping[str, int] = field(default_factory=dict)
    alternate: NetShape | None = None
    controller: NetShape | None = None  # hidden layers; output width = model inputs
    backend: Backend = field(default_factory=Backend)
    max_iterations: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    log_dir: str | None = None
    time_limit: float | None = None  # wall-clock seconds; checked between iterations

    def validate(self) -> None:
        try:
            check_sets(self.kind, self.sets)
            check_time_domain(self.kind, self.model.discrete)
        except CertificateError as exc:
            raise ConfigError(str(exc)) from None
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        for role, d in self.sets.items():
            if d.dimension != self.model.n_vars:
                raise ConfigError(f"set {role} has dimension {d.dimension}, model has {self.model.n_vars}")
        if (self.alternate is not None) != (self.kind in TWO_FUNCTION):
            need = "needs" if self.kind in TWO_FUNCTION else "does not take"
            raise ConfigError(f"{self.kind.value} {need} a second certificate network")
        if (self.controller is not None) != (not self.model.autonomous):
            raise ConfigError("a controller network is required exactly when the model has inputs")
        if self.backend.kind is SolverKind.DREAL and stability_type(self.kind):
            from .domains import Torus

            if not isinstance(self.sets["XD"], Torus):
                raise ConfigError("stability certificates verified with DREAL need a Torus XD")
        if self.backend.kind.polynomial_only:
            for shape in (self.certificate, self.alternate, self.controller):
                if shape is not None and not all(a.polynomial for a in shape.activations):
                    raise ConfigError(f"{self.backend.kind.value} needs polynomial activations")
            if not self.model.is_polynomial():
                raise ConfigError(f"{self.backend.kind.value} needs polynomial dynamics")
        for shape in (self.certificate, self.alternate):
            if shape is not None and any(not a.smt_encodable for a in shape.activations):
                raise ConfigError("RELU is not allowed in certificate networks")


@dataclass
class IterationRecord:
    index: int
    loss: float
    epochs: int
    learn_time: float
    verify_time: float
    verdicts: dict[str, str]
    counterexamples: dict[str, list[list[float]]]
    data_sizes: dict[str, int]
    messages: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CegisReport:
    status: Status
    iterations: int = 0
    records: list[IterationRecord] = field(default_factory=list)
    expressions: CandidateExpressions | None = None
    networks: dict[str, dict] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    message: str = ""
    final_results: list[GroupResult] = field(default_factory=list)

    @property
    def certificate(self) -> dict[str, str]:
        if self.expressions is None:
            return {}
        out = {"V": E.print_infix(self.expressions.V)}
        if self.expressions.W is not None:
            out["W"] = E.print_infix(self.expressions.W)
        return out

    @property
    def controller(self) -> list[str] | None:
        if self.expressions is None or self.expressions.controller is None:
            return None
        return [E.print_infix(c) for c in self.expressions.controller]

    @property
    def counterexamples(self) -> list[dict]:
        out = []
        for rec in self.records:
            for group, pts in rec.counterexamples.items():
                out.append({"iteration": rec.index, "group": group, "points": pts})
        return out

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "certificate": self.certificate,
            "controller": self.controller,
            "levels": dict(self.expressions.levels) if self.expressions else {},
            "timings": self.timings,
            "counterexamples": self.counterexamples,
            "trace": [r.to_dict() for r in self.records],
            "networks": self.networks,
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------


def build_candidate(cfg: CegisConfig) -> Candidate:
    n = cfg.model.n_vars
    shape = cfg.certificate
    v = Network(n, shape.hidden, shape.activations, bias=primary_bias(cfg.kind), seed=cfg.seed,
                levels=LEVELS.get(cfg.kind, ()))
    w = None
    if cfg.alternate is not None:
        w = Network(n, cfg.alternate.hidden, cfg.alternate.activations, bias=True, seed=cfg.seed + 1)
    ctrl = None
    if cfg.controller is not None:
        ctrl = Network(n, cfg.controller.hidden, cfg.controller.activations, n_outputs=cfg.model.n_inputs,
                       bias=False, seed=cfg.seed + 2)
    pin = stability_type(cfg.kind) and not all(a.zero_fixing for a in shape.activations)
    return Candidate(v, w, ctrl, pin_origin=pin)


def initial_data(cfg: CegisConfig, regs: Mapping[str, Region], rng: np.random.Generator) -> dict[str, torch.Tensor]:
    data = {}
    for name in sorted(regs):
        reg = regs[name]
        count = int(cfg.n_data.get(name, cfg.n_data.get(reg.count_role, DEFAULT_N_DATA)))
        data[name] = torch.as_tensor(reg.sample(count, rng))
    return data


def enrich(
    data: dict[str, torch.Tensor],
    region: Region,
    point: np.ndarray,
    rng: np.random.Generator,
    count: int = N_NEIGHBOURS,
    scale: float = NEIGHBOUR_SCALE,
) -> int:
    """Append ``point`` and its in-region Gaussian neighbours; returns the growth."""
    point = np.asarray(point, dtype=np.float64).reshape(1, -1)
    sigma = scale * region.domain.characteristic_radius
    cloud = point + rng.normal(0.0, sigma, size=(count, point.shape[1]))
    inside = E.eval_formula(region.predicate(), cloud) if count else np.zeros(0, bool)
    new = np.vstack([point, cloud[inside]])
    old = data.get(region.name)
    add = torch.as_tensor(new)
    data[region.name] = add if old is None else torch.cat([old, add])
    return new.shape[0]


def _records_from(results: Sequence[GroupResult]):
    verdicts = {r.name: r.verdict.value for r in results}
    cex = {r.name: [p.tolist() for p in r.points] for r in results if r.points}
    msgs = {r.name: r.message for r in results if r.message}
    return verdicts, cex, msgs


def _networks(cand: Candidate) -> dict[str, dict]:
    out = {"V": cand.V.to_dict()}
    if cand.W is not None:
        out["W"] = cand.W.to_dict()
    if cand.controller is not None:
        out["controller"] = cand.controller.to_dict()
    return out


def _iteration_dir(cfg: CegisConfig, index: int) -> Path | None:
    if cfg.log_dir is None:
        return None
    return Path(cfg.log_dir) / f"iter_{index:03d}"


def synthesise(cfg: CegisConfig) -> CegisReport:
    """Run the loop until every group is refuted or the budget is spent."""
    t_start = time.perf_counter()
    learn_total = verify_total = 0.0
    report = CegisReport(Status.BUDGET_EXHAUSTED)
    try:
        cfg.validate()
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        regs = regions(cfg.kind, cfg.sets)
        data = initial_data(cfg, regs, rng)
        cand = build_candidate(cfg)
        learner = Learner(cand, cfg.train)
        if cfg.log_dir:
            from .config import dump  # config imports this module

            Path(cfg.log_dir).mkdir(parents=True, exist_ok=True)
            (Path(cfg.log_dir) / "config.yaml").write_text(dump(cfg))
        for it in range(cfg.max_iterations):
            tr = learner.train(cfg.kind, data, cfg.model)
            learn_total += tr.learn_time
            exprs = cand.to_expressions()
            t0 = time.perf_counter()
            results = verify_candidate(cfg.kind, exprs, cfg.sets, cfg.model, cfg.backend,
                                       log_dir=_iteration_dir(cfg, it))
            vt = time.perf_counter() - t0
            verify_total += vt
            verdicts, cex, msgs = _records_from(results)
            report.records.append(IterationRecord(it, tr.loss, tr.epochs, tr.learn_time, vt, verdicts, cex,
                                                  {k: int(v.shape[0]) for k, v in data.items()}, msgs))
            report.iterations = it + 1
            report.expressions = exprs
            report.networks = _networks(cand)
            report.final_results = results
            if all_unsat(results):
                report.status = Status.VALID
                break
            if cfg.time_limit is not None and time.perf_counter() - t_start > cfg.time_limit:
                report.message = f"time limit of {cfg.time_limit} s reached after {it + 1} iterations"
                break
            for r in results:
                if r.verdict in (Verdict.SOLVER_ERROR, Verdict.TIMEOUT):
                    log.warning("iteration %d group %s: %s %s", it, r.name, r.verdict.value, r.message)
                for p in r.points:
                    enrich(data, regs[r.region], p, rng)
    except (ConfigError, CertificateError, DomainError, ModelError, NetworkError, TrainingError,
            VerifierError, E.ExprError) as exc:
        report.status = Status.ERROR
        report.message = f"{type(exc).__name__}: {exc}"
    report.timings = {
        "total": time.perf_counter() - t_start,
        "learn": learn_total,
        "verify": verify_total,
    }
    if cfg.log_dir:
        Path(cfg.log_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.log_dir) / "report.json").write_text(report.to_json())
    return report


def verify_only(cfg: CegisConfig, exprs: CandidateExpressions) -> CegisReport:
    """Check user-supplied expressions; VALID or FALSIFIED (ERROR on solver trouble)."""
    t0 = time.perf_counter()
    report = CegisReport(Status.ERROR, expressions=exprs)
    try:
        check_sets(cfg.kind, cfg.sets)
        check_time_domain(cfg.kind, cfg.model.discrete)
        results = verify_candidate(cfg.kind, exprs, cfg.sets, cfg.model, cfg.backend, log_dir=_iteration_dir(cfg, 0))
    except (ConfigError, CertificateError, DomainError, ModelError, VerifierError, E.ExprError) as exc:
        report.message = f"{type(exc).__name__}: {exc}"
        report.timings = {"total": time.perf_counter() - t0, "learn": 0.0, "verify": time.perf_counter() - t0}
        return report
    elapsed = time.perf_counter() - t0
    verdicts, cex, msgs = _records_from(results)
    report.records.append(IterationRecord(0, float("nan"), 0, 0.0, elapsed, verdicts, cex, {}, msgs))
    report.iterations = 1
    report.final_results = results
    if all_unsat(results):
        report.status = Status.VALID
    elif any(r.falsified and r.points for r in results):
        report.status = Status.FALSIFIED
    else:
        report.status = Status.ERROR
        report.message = "; ".join(f"{r.name}: {r.verdict.value} {r.message}" for r in results if r.verdict is not Verdict.UNSAT)
    report.timings = {"total": elapsed, "learn": 0.0, "verify": elapsed}
    return report


def learn_only(cfg: CegisConfig) -> CegisReport:
    """Train once on sampled data and return the candidate unverified."""
    t0 = time.perf_counter()
    report = CegisReport(Status.UNVERIFIED)
    try:
        cfg.validate()
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        data = initial_data(cfg, regions(cfg.kind, cfg.sets), rng)
        cand = build_candidate(cfg)
        tr = Learner(cand, cfg.train).train(cfg.kind, data, cfg.model)
        report.expressions = cand.to_expressions()
        report.networks = _networks(cand)
        report.iterations = 1
        report.records.append(IterationRecord(0, tr.loss, tr.epochs, tr.learn_time, 0.0, {}, {},
                                              {k: int(v.shape[0]) for k, v in data.items()}))
        report.timings = {"total": time.perf_counter() - t0, "learn": tr.learn_time, "verify": 0.0}
    except (ConfigError, CertificateError, DomainError, ModelError, NetworkError, TrainingError, E.ExprError) as exc:
        report.status = Status.ERROR
        report.message = f"{type(exc).__name__}: {exc}"
        report.timings = {"total": time.perf_counter() - t0, "learn": 0.0, "verify": 0.0}
    return report


def reverify(report: CegisReport, cfg: CegisConfig, backend: Backend | None = None) -> list[GroupResult]:
    """Independent re-check of a reported certificate (fresh processes, re-emitted scripts)."""
    if report.expressions is None:
        raise ConfigError("report carries no certificate")
    return verify_candidate(cfg.kind, report.expressions, cfg.sets, cfg.model, backend or cfg.backend)
