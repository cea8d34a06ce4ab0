"""Certificate conditions: training losses and negated verification groups.

Every certificate is described by a list of :class:`Condition` records.  The
same record drives both interpretations, which keeps the loss and the
constraint groups coherent by construction:

* numerically, a condition ``q op rhs`` on a data region yields a signed
  slack ``s`` (positive when satisfied) and contributes ``mean(relu(m - s))``;
* symbolically, its group is ``region /\\ guard /\\ not(q op rhs)`` (plus the
  origin exclusion for stability-type conditions).

``q`` is either the value of a certificate function or its derivative along
the model (Lie derivative, or the decrement ``V(f(x)) - V(x)`` in discrete
time).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from . import expr as E
from .domains import Difference, Domain, DomainError
from .models import DynamicalModel, ModelError, close_loop_with_expressions, lie_symbolic
from .nnet import Network

EPS_LEARN = 0.05  # training margin inside every relu
EPS_V = 1e-4  # strict decrease rate in reach conditions
BAND = 1e-4  # |B| <= BAND replaces B = 0 at verification
BELT = 0.25  # training-time width of guards such as B = 0


class CertificateError(ValueError):
    pass


class CertificateKind(str, enum.Enum):
    LYAPUNOV = "Lyapunov"
    ROA = "ROA"
    BARRIER = "Barrier"
    SWA = "SWA"
    RWA = "RWA"
    RSWA = "RSWA"
    RAR = "RAR"

    @classmethod
    def parse(cls, name: str) -> "CertificateKind":
        key = str(name).strip().lower()
        for k in cls:
            if k.value.lower() == key or k.name.lower() == key:
                return k
        if key in ("safety", "barrier_certificate"):
            return cls.BARRIER
        raise CertificateError(f"unknown certificate kind {name!r}")


REQUIRED_SETS: dict[CertificateKind, tuple[str, ...]] = {
    CertificateKind.LYAPUNOV: ("XD",),
    CertificateKind.ROA: ("XD", "XI"),
    CertificateKind.BARRIER: ("XD", "XI", "XU"),
    CertificateKind.SWA: ("XD", "XI", "XU"),
    CertificateKind.RWA: ("XD", "XI", "XS", "XG"),
    CertificateKind.RSWA: ("XD", "XI", "XS", "XF"),
    CertificateKind.RAR: ("XD", "XS", "XI", "XG", "XF"),
}

TWO_FUNCTION = frozenset({CertificateKind.SWA, CertificateKind.RAR})
DISCRETE_OK = frozenset({CertificateKind.LYAPUNOV, CertificateKind.BARRIER})
LEVELS: dict[CertificateKind, tuple[str, ...]] = {CertificateKind.ROA: ("beta",), CertificateKind.RSWA: ("gamma",)}


def stability_type(kind: CertificateKind) -> bool:
    """Kinds whose primary function is a Lyapunov function pinned at the origin."""
    return kind in (CertificateKind.LYAPUNOV, CertificateKind.ROA, CertificateKind.SWA)


def primary_bias(kind: CertificateKind) -> bool:
    return not stability_type(kind)


# ---------------------------------------------------------------------------
# condition records


@dataclass(frozen=True)
class Bound:
    """Either a fixed number or a trained level of the primary network."""

    value: float = 0.0
    level: str | None = None

    def numeric(self, levels: Mapping[str, torch.Tensor]):
        return levels[self.level] if self.level else self.value

    def symbolic(self, levels: Mapping[str, float]) -> E.Expr:
        return E.Const(float(levels[self.level])) if self.level else E.Const(self.value)


ZERO = Bound()


@dataclass(frozen=True)
class Guard:
    """``lo <= fn(x) <= hi``; either side may be absent."""

    fn: str
    lo: Bound | None = None
    hi: Bound | None = None
    belt: float = BELT


@dataclass(frozen=True)
class Condition:
    name: str
    region: str
    fn: str  # "V" or "W"
    quantity: str  # "value" or "lie"
    op: str  # required relation, q op rhs
    rhs: Bound = ZERO
    guard: Guard | None = None
    train_guard: bool = True  # apply the (widened) guard as a training mask
    quadratic_margin: bool = False
    exclude_origin: bool = False


@dataclass(frozen=True)
class Region:
    name: str
    domain: Domain
    count_role: str
    boundary: bool = False

    def predicate(self) -> E.Formula:
        return self.domain.boundary_predicate() if self.boundary else self.domain.predicate()

    def sample(self, count: int, rng) -> np.ndarray:
        if self.boundary:
            return self.domain.boundary_sample(count, rng)
        return self.domain.sample(count, rng)


def _lyapunov_conditions(prefix: str, region: str, fn: str, guard: Guard | None = None) -> list[Condition]:
    return [
        Condition(f"{prefix}positive", region, fn, "value", ">", guard=guard, quadratic_margin=True, exclude_origin=True),
        Condition(f"{prefix}decrease", region, fn, "lie", "<", guard=guard, quadratic_margin=True, exclude_origin=True),
    ]


def _barrier_conditions(prefix: str, fn: str, discrete: bool) -> list[Condition]:
    conds = [
        Condition(f"{prefix}initial", "XI", fn, "value", "<="),
        Condition(f"{prefix}unsafe", "XU", fn, "value", ">"),
    ]
    if discrete:
        conds.append(Condition(f"{prefix}invariance", "XD", fn, "lie", "<=", guard=Guard(fn, hi=ZERO)))
    else:
        band = Guard(fn, lo=Bound(-BAND), hi=Bound(BAND))
        conds.append(Condition(f"{prefix}flow", "XD", fn, "lie", "<", guard=band))
    return conds


def _reach_conditions(goal_region: str, fn: str = "V") -> list[Condition]:
    return [
        Condition("initial", "XI", fn, "value", "<="),
        Condition("unsafe", "XD-XS", fn, "value", ">"),
        Condition("decrease", goal_region, fn, "lie", "<=", rhs=Bound(-EPS_V), guard=Guard(fn, hi=ZERO), train_guard=False),
    ]


def conditions(kind: CertificateKind, discrete: bool = False) -> list[Condition]:
    if kind is CertificateKind.LYAPUNOV:
        return _lyapunov_conditions("", "XD", "V")
    if kind is CertificateKind.ROA:
        inside = Guard("V", hi=Bound(level="beta"))
        return _lyapunov_conditions("", "XD", "V", inside) + [
            Condition("initial", "XI", "V", "value", "<=", rhs=Bound(level="beta")),
            Condition("boundary", "dXD", "V", "value", ">", rhs=Bound(level="beta")),
        ]
    if kind is CertificateKind.BARRIER:
        return _barrier_conditions("", "V", discrete)
    if kind is CertificateKind.SWA:
        return _lyapunov_conditions("V.", "XD", "V") + _barrier_conditions("B.", "W", False)
    if kind is CertificateKind.RWA:
        return _reach_conditions("XS-XG")
    if kind is CertificateKind.RSWA:
        gamma = Bound(level="gamma")
        return _reach_conditions("XS")[:2] + [
            Condition("containment", "XS-XF", "V", "value", ">", rhs=gamma),
            Condition("decrease", "XS", "V", "lie", "<=", rhs=Bound(-EPS_V), guard=Guard("V", lo=gamma, hi=ZERO)),
        ]
    if kind is CertificateKind.RAR:
        band = Guard("W", lo=Bound(-BAND), hi=Bound(BAND))
        return [
            *_reach_conditions("XS-XG"),
            Condition("W.goal", "XG", "W", "value", "<="),
            Condition("W.final", "XD-XF", "W", "value", ">"),
            Condition("W.flow", "XF", "W", "lie", "<", guard=band),
        ]
    raise CertificateError(kind)


def regions(kind: CertificateKind, sets: Mapping[str, Domain]) -> dict[str, Region]:
    """Data regions referenced by the conditions of ``kind``."""
    check_sets(kind, sets)
    out: dict[str, Region] = {}

    def add(name, domain, role, boundary=False):
        out[name] = Region(name, domain, role, boundary)

    for cond in conditions(kind):
        r = cond.region
        if r in out:
            continue
        if r in sets:
            add(r, sets[r], r)
        elif r == "dXD":
            add(r, sets["XD"], "XD", boundary=True)
        elif r == "XD-XS":
            add(r, Difference(sets["XD"], sets["XS"].interior()), "XD")
        elif r == "XD-XF":
            add(r, Difference(sets["XD"], sets["XF"].interior()), "XD")
        elif r == "XS-XG":
            add(r, Difference(sets["XS"], sets["XG"]), "XS")
        elif r == "XS-XF":
            add(r, Difference(sets["XS"], sets["XF"]), "XS")
        else:  # pragma: no cover - table above is exhaustive
            raise CertificateError(f"no region {r!r}")
    return out


def check_sets(kind: CertificateKind, sets: Mapping[str, Domain]) -> None:
    missing = [r for r in REQUIRED_SETS[kind] if r not in sets]
    if missing:
        raise CertificateError(f"{kind.value} needs sets {list(REQUIRED_SETS[kind])}; missing {missing}")


def check_time_domain(kind: CertificateKind, discrete: bool) -> None:
    if discrete and kind not in DISCRETE_OK:
        raise CertificateError(f"{kind.value} certificates are continuous-time only")


# ---------------------------------------------------------------------------
# candidates


@dataclass
class Candidate:
    """Trainable networks of one synthesis job."""

    V: Network
    W: Network | None = None
    controller: Network | None = None
    pin_origin: bool = False  # use V(x) - V(0) so that V vanishes at the origin

    def parameters(self) -> list[torch.Tensor]:
        params = self.V.parameters()
        if self.W is not None:
            params += self.W.parameters()
        if self.controller is not None:
            params += self.controller.parameters()
        return params

    def levels(self) -> dict[str, float]:
        return {k: self.V.level(k) for k in sorted(self.V.levels)}

    def to_expressions(self) -> "CandidateExpressions":
        v = self.V.to_expression()[0]
        if self.pin_origin:
            v = E.sub(v, E.substitute(v, states=[E.ZERO] * self.V.n_inputs))
        w = None if self.W is None else self.W.to_expression()[0]
        ctrl = None if self.controller is None else tuple(self.controller.to_expression())
        return CandidateExpressions(v, w, self.levels(), ctrl)


@dataclass(frozen=True)
class CandidateExpressions:
    """Frozen symbolic candidate."""

    V: E.Expr
    W: E.Expr | None = None
    levels: Mapping[str, float] = field(default_factory=dict)
    controller: tuple[E.Expr, ...] | None = None

    def function(self, name: str) -> E.Expr:
        f = self.V if name == "V" else self.W
        if f is None:
            raise CertificateError(f"candidate has no function {name}")
        return f


# ---------------------------------------------------------------------------
# numeric side


class _Evaluator:
    """Values and derivatives of V/W on one batch, memoised per function."""

    def __init__(self, cand: Candidate, model: DynamicalModel, x: torch.Tensor):
        self.cand, self.model, self.x = cand, model, x
        self._cache: dict[tuple[str, str], torch.Tensor] = {}
        self._f = None

    def _net(self, fn):
        net = self.cand.V if fn == "V" else self.cand.W
        if net is None:
            raise CertificateError(f"candidate has no function {fn}")
        return net

    def _offset(self, fn, net):
        if fn == "V" and self.cand.pin_origin:
            return net.forward(torch.zeros(1, net.n_inputs, dtype=self.x.dtype))[0, 0]
        return None

    def _apply(self, fn, x):
        net = self._net(fn)
        v = net.forward(x)[:, 0]
        off = self._offset(fn, net)
        return v if off is None else v - off

    def field(self):
        if self._f is None:
            u = None
            if not self.model.autonomous:
                if self.cand.controller is None:
                    raise CertificateError("controlled model needs a controller network")
                u = self.cand.controller.forward(self.x)
            self._f = self.model.f_torch(self.x, u)
        return self._f

    def get(self, fn, quantity):
        key = (fn, quantity)
        if key in self._cache:
            return self._cache[key]
        if self.model.discrete:
            v = self._apply(fn, self.x)
            self._cache[(fn, "value")] = v
            if quantity == "lie":
                self._cache[key] = self._apply(fn, self.field()) - v
        else:
            net = self._net(fn)
            if quantity == "value":
                self._cache[key] = self._apply(fn, self.x)
            else:
                v, g = net.forward_with_gradient(self.x)
                off = self._offset(fn, net)
                self._cache[(fn, "value")] = v[:, 0] if off is None else v[:, 0] - off
                self._cache[key] = (g[:, 0, :] * self.field()).sum(dim=1)
        return self._cache[key]


def _slack(op: str, q, rhs):
    return q - rhs if op in (">", ">=") else rhs - q


@dataclass
class LossResult:
    loss: torch.Tensor
    terms: dict[str, float]
    violations: dict[str, int]

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())


class _Table:
    """Lazy ``(region, fn, quantity) -> tensor`` lookup backed by the networks."""

    def __init__(self, cand: Candidate, model: DynamicalModel, data: Mapping[str, torch.Tensor]):
        self.cand, self.model, self.data = cand, model, data
        self._ev: dict[str, _Evaluator] = {}

    def __getitem__(self, key):
        region, fn, quantity = key
        ev = self._ev.get(region)
        if ev is None:
            ev = self._ev[region] = _Evaluator(self.cand, self.model, self.data[region])
        return ev.get(fn, quantity)


def _as_number(b: Bound, levels) -> torch.Tensor | float:
    v = b.numeric(levels)
    return v.detach() if isinstance(v, torch.Tensor) else v


def loss_from_values(
    conds: Sequence[Condition],
    values,
    points: Mapping[str, torch.Tensor],
    levels: Mapping[str, torch.Tensor] | None = None,
    margin: float = EPS_LEARN,
) -> LossResult:
    """Loss of precomputed quantities; ``values[(region, fn, quantity)]``."""
    levels = levels or {}
    total = torch.zeros((), dtype=torch.float64)
    terms, viol = {}, {}
    for c in conds:
        x = points.get(c.region)
        if x is None:
            raise CertificateError(f"no data for region {c.region!r}")
        if x.shape[0] == 0:
            terms[c.name], viol[c.name] = 0.0, 0
            continue
        q = values[(c.region, c.fn, c.quantity)]
        s = _slack(c.op, q, c.rhs.numeric(levels))
        m = margin * (x * x).sum(dim=1) if c.quadratic_margin else margin
        per_point = torch.relu(m - s)
        if c.guard is not None and c.train_guard:
            g = values[(c.region, c.guard.fn, "value")].detach()
            mask = torch.ones_like(g, dtype=torch.bool)
            if c.guard.lo is not None:
                mask &= g >= _as_number(c.guard.lo, levels) - c.guard.belt
            if c.guard.hi is not None:
                mask &= g <= _as_number(c.guard.hi, levels) + c.guard.belt
            per_point = per_point * mask.to(per_point.dtype)
        term = per_point.mean()
        total = total + term
        terms[c.name] = float(term.detach())
        viol[c.name] = int((per_point.detach() > 0).sum())
    return LossResult(total, terms, viol)


def loss(
    kind: CertificateKind,
    cand: Candidate,
    data: Mapping[str, torch.Tensor],
    model: DynamicalModel,
    margin: float = EPS_LEARN,
) -> LossResult:
    """Sum over conditions of ``mean(relu(m - s))`` on that condition's region.

    ``m`` is ``margin`` or ``margin * |x|^2`` for conditions pinned at the
    origin.  Guards (e.g. ``B = 0``) select training points within
    ``BELT`` of the guarded set.  ``violations`` counts points with ``s < m``.
    """
    levels = cand.V.levels
    res = loss_from_values(conditions(kind, model.discrete), _Table(cand, model, data), data, levels, margin)
    if kind is CertificateKind.RSWA:
        # keep the final sublevel strictly below the reach level 0
        res.loss = res.loss + torch.relu(levels["gamma"] + margin)
    return res


def control_loss(model: DynamicalModel, controller: Network, x: torch.Tensor, weight: float = 0.0) -> torch.Tensor:
    """Mean cosine between each state and the closed-loop field there, plus ``weight * mean |u|^2``."""
    if model.autonomous:
        raise CertificateError("control loss needs a model with inputs")
    u = controller.forward(x)
    f = model.f_torch(x, u)
    cos = (x * f).sum(dim=1) / (x.norm(dim=1) * f.norm(dim=1) + 1e-8)
    out = cos.mean()
    if weight:
        out = out + weight * (u * u).sum(dim=1).mean()
    return out


# ---------------------------------------------------------------------------
# symbolic side


@dataclass(frozen=True)
class ConstraintGroup:
    name: str
    formula: E.Formula
    condition: Condition
    region: str


def _relation(op: str, lhs: E.Expr, rhs: E.Expr) -> E.Formula:
    return E.Atom(op, lhs, rhs)


def origin_exclusion(n_vars: int) -> E.Formula:
    return E.disj(*(E.Not(E.Atom("=", E.Var(i), E.ZERO)) for i in range(n_vars)))


def closed_model(model: DynamicalModel, exprs: CandidateExpressions) -> DynamicalModel:
    if model.autonomous:
        return model
    if exprs.controller is None:
        raise CertificateError("controlled model needs controller expressions")
    return close_loop_with_expressions(model, exprs.controller)


def constraint_groups(
    kind: CertificateKind,
    exprs: CandidateExpressions,
    sets: Mapping[str, Domain],
    model: DynamicalModel,
    exclude_origin: bool = True,
) -> list[ConstraintGroup]:
    """Negated conditions.  A group is satisfiable iff its condition fails somewhere.

    ``exclude_origin`` adds ``x0 != 0 \\/ ... `` to stability-type groups; it
    is switched off for dReal, whose domain must be a torus instead.
    """
    check_time_domain(kind, model.discrete)
    regs = regions(kind, sets)
    closed = closed_model(model, exprs)
    lies: dict[str, E.Expr] = {}
    groups = []
    for c in conditions(kind, model.discrete):
        fexpr = exprs.function(c.fn)
        if c.quantity == "lie":
            if c.fn not in lies:
                lies[c.fn] = lie_symbolic(closed, fexpr)
            q = lies[c.fn]
        else:
            q = fexpr
        parts = [regs[c.region].predicate()]
        if c.guard is not None:
            g = exprs.function(c.guard.fn)
            if c.guard.lo is not None:
                parts.append(_relation(">=", g, c.guard.lo.symbolic(exprs.levels)))
            if c.guard.hi is not None:
                parts.append(_relation("<=", g, c.guard.hi.symbolic(exprs.levels)))
        parts.append(E.negate(_relation(c.op, q, c.rhs.symbolic(exprs.levels))))
        if c.exclude_origin and exclude_origin:
            parts.append(origin_exclusion(model.n_vars))
        groups.append(ConstraintGroup(c.name, E.conj(*parts), c, c.region))
    return groups


def condition_slack(
    cond: Condition, exprs: CandidateExpressions, model: DynamicalModel, points: np.ndarray
) -> np.ndarray:
    """Signed slack of ``cond`` at ``points`` from the symbolic candidate (numpy)."""
    closed = closed_model(model, exprs)
    f = exprs.function(cond.fn)
    q = lie_symbolic(closed, f) if cond.quantity == "lie" else f
    vals = E.eval_batch(q, points)
    return _slack(cond.op, vals, float(cond.rhs.symbolic(exprs.levels).value))


__all__ = [
    "BAND",
    "BELT",
    "Candidate",
    "CandidateExpressions",
    "CertificateError",
    "CertificateKind",
    "Condition",
    "ConstraintGroup",
    "DomainError",
    "EPS_LEARN",
    "EPS_V",
    "LEVELS",
    "ModelError",
    "REQUIRED_SETS",
    "Region",
    "TWO_FUNCTION",
    "conditions",
    "constraint_groups",
    "control_loss",
    "loss",
    "regions",
]
