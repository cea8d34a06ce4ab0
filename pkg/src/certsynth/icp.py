"""Interval branch-and-prune solver for delta-decisions over the reals.

A small stand-in for dReal used when no ``dreal`` executable is available.
It reads an SMT-LIB script (quantifier-free, real variables, polynomial and
``exp/log/sin/cos/tanh`` terms), and answers

* ``unsat`` when interval arithmetic refutes the formula on every box of a
  cover of the (bounded) search space, or
* ``delta-sat with delta = d`` together with a box of width at most ``d`` on
  which the formula could not be refuted, or a point at which it holds
  exactly.

Interval results are widened outwards by one ulp after every operation.
Transcendental kernels are widened by a few ulps to cover libm error.

    python -m certsynth.icp --precision 0.0001 --model script.smt2
"""
from __future__ import annotations

import argparse
import math
import re
import sys
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as E

BIG = 1e8  # a variable whose bounds cannot be contracted below this is rejected


class ICPError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SMT-LIB reading


_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|(\|[^|]*\|)|([^\s()]+))")


def tokenize(text: str) -> list[str]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ICPError(f"cannot tokenize at offset {pos}")
        pos = m.end()
        if m.group(1):
            continue
        out.append(m.group(2) or m.group(3) or m.group(4) or m.group(5))
    return out


def read_sexprs(text: str) -> list:
    tokens = tokenize(text)
    stack: list[list] = [[]]
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ICPError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ICPError("unbalanced '('")
    return stack[0]


_UNARY = {"exp": "exp", "log": "log", "sin": "sin", "cos": "cos", "tanh": "tanh"}


class Script:
    """Declarations and assertions of one SMT-LIB script."""

    def __init__(self):
        self.variables: list[str] = []
        self.index: dict[str, int] = {}
        self.macros: dict[str, object] = {}
        self.assertions: list[E.Formula] = []
        self.commands: list[str] = []

    # terms ---------------------------------------------------------------

    def term(self, s, env: dict) -> E.Expr:
        if isinstance(s, str):
            if s in env:
                v = env[s]
                if isinstance(v, E.Expr):
                    return v
                raise ICPError(f"{s} is boolean, expected a real term")
            if s in self.index:
                return E.Var(self.index[s])
            if s in self.macros:
                v = self.macros[s]
                if isinstance(v, E.Expr):
                    return v
                raise ICPError(f"{s} is boolean, expected a real term")
            try:
                return E.Const(float(s))
            except ValueError:
                raise ICPError(f"unknown symbol {s!r}") from None
        if not s:
            raise ICPError("empty term")
        head, args = s[0], s[1:]
        if head == "let":
            return self._let(s, env, self.term)
        if head == "+":
            terms = [self.term(a, env) for a in args]
            out = terms[0]
            for t in terms[1:]:
                out = E.Add(out, t)
            return out
        if head == "-":
            terms = [self.term(a, env) for a in args]
            if len(terms) == 1:
                return E.Neg(terms[0])
            out = terms[0]
            for t in terms[1:]:
                out = E.Sub(out, t)
            return out
        if head == "*":
            return self._product([self.term(a, env) for a in args])
        if head == "/":
            terms = [self.term(a, env) for a in args]
            out = terms[0]
            for t in terms[1:]:
                out = E.Div(out, t)
            return out
        if head in ("^", "pow"):
            base = self.term(args[0], env)
            k = self.term(args[1], env)
            if not isinstance(k, E.Const) or k.value != int(k.value) or k.value < 0:
                raise ICPError("only non-negative integer powers are supported")
            return E.Pow(base, int(k.value))
        if head in _UNARY:
            return E.Call(_UNARY[head], self.term(args[0], env))
        raise ICPError(f"unsupported operator {head!r}")

    @staticmethod
    def _product(terms: list[E.Expr]) -> E.Expr:
        # identical factors become one power: tighter intervals
        groups: list[list] = []
        for t in terms:
            for g in groups:
                if g[0] == t:
                    g[1] += 1
                    break
            else:
                groups.append([t, 1])
        factors = [g[0] if g[1] == 1 else E.Pow(g[0], g[1]) for g in groups]
        out = factors[0]
        for f in factors[1:]:
            out = E.Mul(out, f)
        return out

    def _let(self, s, env, body_fn):
        if len(s) != 3:
            raise ICPError("malformed let")
        inner = dict(env)
        for binding in s[1]:
            name, value = binding
            try:
                inner[name] = self.term(value, env)
            except ICPError:
                inner[name] = self.formula(value, env)
        return body_fn(s[2], inner)

    # formulas ------------------------------------------------------------

    def formula(self, s, env: dict) -> E.Formula:
        if isinstance(s, str):
            if s == "true":
                return E.TRUE
            if s == "false":
                return E.FALSE
            v = env.get(s, self.macros.get(s))
            if isinstance(v, E.Formula):
                return v
            raise ICPError(f"unknown boolean {s!r}")
        head, args = s[0], s[1:]
        if head == "let":
            return self._let(s, env, self.formula)
        if head == "and":
            return E.And(tuple(self.formula(a, env) for a in args))
        if head == "or":
            return E.Or(tuple(self.formula(a, env) for a in args))
        if head == "not":
            return E.Not(self.formula(args[0], env))
        if head == "=>":
            return E.Or((E.Not(self.formula(args[0], env)), self.formula(args[1], env)))
        if head in ("<", "<=", ">", ">=", "="):
            terms = [self.term(a, env) for a in args]
            atoms = [E.Atom(head, a, b) for a, b in zip(terms[:-1], terms[1:])]
            return atoms[0] if len(atoms) == 1 else E.And(tuple(atoms))
        raise ICPError(f"unsupported boolean operator {head!r}")

    # commands ------------------------------------------------------------

    def command(self, s):
        if not isinstance(s, list) or not s:
            raise ICPError(f"malformed command {s!r}")
        head = s[0]
        if head in ("set-logic", "set-info", "set-option"):
            return
        if head == "declare-fun":
            if s[2]:
                raise ICPError("only nullary declarations are supported")
            self._declare(s[1], s[3])
        elif head == "declare-const":
            self._declare(s[1], s[2])
        elif head == "define-fun":
            name, params, sort, body = s[1:5]
            if params:
                raise ICPError("only nullary definitions are supported")
            self.macros[name] = self.term(body, {}) if sort == "Real" else self.formula(body, {})
        elif head == "assert":
            self.assertions.append(self.formula(s[1], {}))
        elif head in ("check-sat", "get-model", "exit"):
            self.commands.append(head)
        else:
            raise ICPError(f"unsupported command {head!r}")

    def _declare(self, name, sort):
        if sort != "Real":
            raise ICPError(f"unsupported sort {sort!r}")
        self.index[name] = len(self.variables)
        self.variables.append(name)


def parse_script(text: str) -> Script:
    sc = Script()
    for s in read_sexprs(text):
        sc.command(s)
    return sc


# ---------------------------------------------------------------------------
# interval arithmetic (batched)

_INF = np.inf


def _down(a):
    return np.nextafter(a, -_INF)


def _up(a):
    return np.nextafter(a, _INF)


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = lo
        self.hi = hi

    @property
    def shape(self):
        return self.lo.shape

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, o):
        return Interval(_down(self.lo + o.lo), _up(self.hi + o.hi))

    def __sub__(self, o):
        return Interval(_down(self.lo - o.hi), _up(self.hi - o.lo))

    def __mul__(self, o):
        with np.errstate(invalid="ignore"):
            p = np.stack([self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
        p = np.where(np.isnan(p), 0.0, p)  # 0 * inf
        return Interval(_down(p.min(axis=0)), _up(p.max(axis=0)))

    def intersect(self, o):
        return Interval(np.maximum(self.lo, o.lo), np.minimum(self.hi, o.hi))


def _widen(lo, hi, ulps=4):
    for _ in range(ulps):
        lo, hi = _down(lo), _up(hi)
    return lo, hi


class IntervalOps:
    @staticmethod
    def const(v, like):
        n = like.shape[0]
        return Interval(np.full(n, v), np.full(n, v))

    @staticmethod
    def div(a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            straddle = (b.lo <= 0) & (b.hi >= 0)
            inv_lo = np.where(straddle, -_INF, _down(1.0 / b.hi))
            inv_hi = np.where(straddle, _INF, _up(1.0 / b.lo))
            r = a * Interval(inv_lo, inv_hi)
        lo = np.where(straddle, -_INF, r.lo)
        hi = np.where(straddle, _INF, r.hi)
        return Interval(lo, hi)

    @staticmethod
    def pow(a, n):
        with np.errstate(over="ignore"):
            if n == 1:
                return a
            # repeated rounding inside ** is within a few ulps; each endpoint
            # power gets its own lower and upper bound
            lo_dn, lo_up = _widen(a.lo**n, a.lo**n, 2 * n)
            hi_dn, hi_up = _widen(a.hi**n, a.hi**n, 2 * n)
            if n % 2:
                return Interval(lo_dn, hi_up)
            low = np.where(a.lo >= 0, lo_dn, np.where(a.hi <= 0, hi_dn, 0.0))
            high = np.where(a.lo >= 0, hi_up, np.where(a.hi <= 0, lo_up, np.maximum(lo_up, hi_up)))
            return Interval(np.maximum(low, 0.0), high)

    @staticmethod
    def exp(a):
        with np.errstate(over="ignore"):
            lo, hi = _widen(np.exp(a.lo), np.exp(a.hi))
        return Interval(np.maximum(lo, 0.0), hi)

    @staticmethod
    def log(a):
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(a.lo > 0, np.log(np.maximum(a.lo, 1e-300)), -_INF)
            hi = np.where(a.hi > 0, np.log(np.maximum(a.hi, 1e-300)), -_INF)
        lo, hi = _widen(lo, hi)
        return Interval(lo, hi)

    @staticmethod
    def tanh(a):
        lo, hi = _widen(np.tanh(a.lo), np.tanh(a.hi))
        return Interval(np.maximum(lo, -1.0), np.minimum(hi, 1.0))

    @staticmethod
    def sigmoid(a):
        return IntervalOps.div(IntervalOps.const(1.0, a), IntervalOps.const(1.0, a) + IntervalOps.exp(-a))

    @staticmethod
    def softplus(a):
        return IntervalOps.log(IntervalOps.const(1.0, a) + IntervalOps.exp(a))

    @staticmethod
    def _periodic(a, fn, peak_offset):
        # fn attains +1 at peak_offset + 2k pi and -1 at peak_offset + pi + 2k pi
        lo, hi = fn(a.lo), fn(a.hi)
        out_lo, out_hi = np.minimum(lo, hi), np.maximum(lo, hi)
        two_pi = 2 * math.pi
        wide = ~np.isfinite(a.lo) | ~np.isfinite(a.hi) | (a.hi - a.lo >= two_pi)
        with np.errstate(invalid="ignore"):
            k_max = np.ceil((a.lo - peak_offset) / two_pi)
            has_max = peak_offset + k_max * two_pi <= a.hi
            k_min = np.ceil((a.lo - peak_offset - math.pi) / two_pi)
            has_min = peak_offset + math.pi + k_min * two_pi <= a.hi
        out_hi = np.where(has_max | wide, 1.0, out_hi)
        out_lo = np.where(has_min | wide, -1.0, out_lo)
        out_lo, out_hi = _widen(out_lo, out_hi)
        return Interval(np.maximum(out_lo, -1.0), np.minimum(out_hi, 1.0))

    @staticmethod
    def sin(a):
        return IntervalOps._periodic(a, np.sin, math.pi / 2)

    @staticmethod
    def cos(a):
        return IntervalOps._periodic(a, np.cos, 0.0)


class Boxes:
    """Batch of boxes, shape (N, n) for ``lo`` and ``hi``."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo, self.hi = lo, hi

    @property
    def shape(self):
        return self.lo.shape

    def __getitem__(self, key):
        return Interval(self.lo[key], self.hi[key])


# ---------------------------------------------------------------------------
# three-valued formula evaluation


def _atom_status(op: str, d: Interval, t: float):
    """(possibly true, certainly true) of ``d op 0`` relaxed by ``t``."""
    lo, hi = d.lo, d.hi
    if op == ">=":
        return hi >= -t, lo >= -t
    if op == ">":
        return hi > -t, lo > -t
    if op == "<=":
        return lo <= t, hi <= t
    if op == "<":
        return lo < t, hi < t
    return (lo <= t) & (hi >= -t), (lo >= -t) & (hi <= t)


def _status(f: E.Formula, table: dict, n: int, t: float):
    if isinstance(f, E.Atom):
        return _atom_status(f.op, table[id(f)], t)
    if f is E.TRUE:
        return np.ones(n, bool), np.ones(n, bool)
    if f is E.FALSE:
        return np.zeros(n, bool), np.zeros(n, bool)
    if isinstance(f, E.Not):
        pos, cert = _status(f.arg, table, n, -t)
        return ~cert, ~pos
    parts = [_status(a, table, n, t) for a in f.args]
    if isinstance(f, E.And):
        pos = np.logical_and.reduce([p for p, _ in parts])
        cert = np.logical_and.reduce([c for _, c in parts])
    else:
        pos = np.logical_or.reduce([p for p, _ in parts])
        cert = np.logical_or.reduce([c for _, c in parts])
    return pos, cert


def _atoms(f: E.Formula) -> list[E.Atom]:
    out, seen = [], set()

    def walk(g):
        if isinstance(g, E.Atom):
            if id(g) not in seen:
                seen.add(id(g))
                out.append(g)
        elif isinstance(g, E.Not):
            walk(g.arg)
        elif isinstance(g, (E.And, E.Or)):
            for a in g.args:
                walk(a)

    walk(f)
    return out


# ---------------------------------------------------------------------------
# initial box by constraint propagation (scalar HC4)


def _fwd(e: E.Expr, box: list[list[float]], memo: dict) -> tuple[float, float]:
    key = id(e)
    if key in memo:
        return memo[key]
    boxes = Boxes(np.array([[b[0] for b in box]]), np.array([[b[1] for b in box]]))
    with np.errstate(all="ignore"):
        iv = E.evaluate_many([e], boxes, ops=IntervalOps)[0]
    lo, hi = float(iv.lo[0]), float(iv.hi[0])
    memo[key] = (-math.inf if math.isnan(lo) else lo, math.inf if math.isnan(hi) else hi)
    return memo[key]


def _bwd(e: E.Expr, lo: float, hi: float, box: list[list[float]]) -> bool:
    """Narrow ``box`` so that ``e`` can lie in [lo, hi]; False when empty."""
    cur = _fwd(e, box, {})
    lo, hi = max(lo, cur[0]), min(hi, cur[1])
    if lo > hi:
        return False
    if isinstance(e, E.Var):
        b = box[e.index]
        b[0], b[1] = max(b[0], lo), min(b[1], hi)
        return b[0] <= b[1]
    if isinstance(e, E.Neg):
        return _bwd(e.arg, -hi, -lo, box)
    if isinstance(e, (E.Add, E.Sub)):
        a = _fwd(e.left, box, {})
        b = _fwd(e.right, box, {})
        if isinstance(e, E.Add):
            ok = _bwd(e.left, lo - b[1], hi - b[0], box)
            a = _fwd(e.left, box, {})
            return ok and _bwd(e.right, lo - a[1], hi - a[0], box)
        ok = _bwd(e.left, lo + b[0], hi + b[1], box)
        a = _fwd(e.left, box, {})
        return ok and _bwd(e.right, a[0] - hi, a[1] - lo, box)
    if isinstance(e, E.Mul):
        for this, other in ((e.left, e.right), (e.right, e.left)):
            c = _fwd(other, box, {})
            if c[0] > 0 or c[1] < 0:
                cands = [lo / c[0], lo / c[1], hi / c[0], hi / c[1]]
                cands = [v for v in cands if not math.isnan(v)]
                if not _bwd(this, min(cands), max(cands), box):
                    return False
        return True
    if isinstance(e, E.Pow) and e.exponent >= 1:
        n = e.exponent
        if hi < 0 and n % 2 == 0:
            return False
        if n % 2:
            root = lambda v: math.copysign(abs(v) ** (1.0 / n), v)  # noqa: E731
            return _bwd(e.base, root(lo) * (1 + 1e-12) - 1e-300 if lo != -math.inf else -math.inf,
                        root(hi) * (1 + 1e-12) + 1e-300 if hi != math.inf else math.inf, box)
        r = hi ** (1.0 / n) * (1 + 1e-12) + 1e-300 if hi != math.inf else math.inf
        return _bwd(e.base, -r, r, box)
    return True


def _top_atoms(f: E.Formula) -> list[E.Atom]:
    if isinstance(f, E.Atom):
        return [f]
    if isinstance(f, E.And):
        return [a for g in f.args for a in _top_atoms(g)]
    return []


def contract(formula: E.Formula, n: int, rounds: int = 8, max_size: int = 80) -> list[list[float]] | None:
    """Bounds implied by the small top-level atoms (set predicates); None if empty."""
    box = [[-BIG, BIG] for _ in range(n)]
    atoms = [a for a in _top_atoms(formula) if E.size(a.lhs) + E.size(a.rhs) <= max_size]
    for _ in range(rounds):
        before = [tuple(b) for b in box]
        for a in atoms:
            d = E.Sub(a.lhs, a.rhs)
            if a.op in ("<=", "<"):
                ok = _bwd(d, -math.inf, 0.0, box)
            elif a.op in (">=", ">"):
                ok = _bwd(d, 0.0, math.inf, box)
            else:
                ok = _bwd(d, 0.0, 0.0, box)
            if not ok:
                return None
        if [tuple(b) for b in box] == before:
            break
    return box


# ---------------------------------------------------------------------------
# search


@dataclass
class Result:
    status: str  # "unsat" | "delta-sat"
    delta: float
    box: np.ndarray | None = None  # (n, 2)
    boxes_explored: int = 0


class Solver:
    def __init__(self, formula: E.Formula, n: int, precision: float = 1e-4, mean_value: bool = True):
        self.formula = formula
        self.n = n
        self.delta = float(precision)
        self.atoms = _atoms(formula)
        self.diffs = [E.Sub(a.lhs, a.rhs) for a in self.atoms]
        self.mean_value = mean_value and n > 0
        if self.mean_value:
            self.grads = [[E.differentiate(d, i) for i in range(n)] for d in self.diffs]

    def _intervals(self, lo, hi) -> dict:
        boxes = Boxes(lo, hi)
        with np.errstate(all="ignore"):
            nat = E.evaluate_many(self.diffs, boxes, ops=IntervalOps)
            if self.mean_value:
                mid = 0.5 * (lo + hi)
                at_mid = E.evaluate_many(self.diffs, Boxes(mid, mid), ops=IntervalOps)
                flat = [g for row in self.grads for g in row]
                gvals = E.evaluate_many(flat, boxes, ops=IntervalOps)
                dx = Interval(lo - mid, hi - mid)
                dx = Interval(_down(dx.lo), _up(dx.hi))
                for k in range(len(self.diffs)):
                    acc = at_mid[k]
                    for i in range(self.n):
                        g = gvals[k * self.n + i]
                        acc = acc + g * Interval(dx.lo[:, i], dx.hi[:, i])
                    lo_k = np.where(np.isnan(acc.lo), -_INF, acc.lo)
                    hi_k = np.where(np.isnan(acc.hi), _INF, acc.hi)
                    nat[k] = nat[k].intersect(Interval(lo_k, hi_k))
        table = {}
        for a, iv in zip(self.atoms, nat):
            lo_a = np.where(np.isnan(iv.lo), -_INF, iv.lo)
            hi_a = np.where(np.isnan(iv.hi), _INF, iv.hi)
            table[id(a)] = Interval(lo_a, hi_a)
        return table

    def solve(self, box: Sequence[Sequence[float]], batch: int = 2048, deadline: float | None = None) -> Result:
        box = np.asarray(box, dtype=np.float64).reshape(self.n, 2)
        stack_lo = [box[:, 0].copy()]
        stack_hi = [box[:, 1].copy()]
        explored = 0
        while stack_lo:
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError("search deadline exceeded")
            take = min(batch, len(stack_lo))
            lo = np.array(stack_lo[-take:])
            hi = np.array(stack_hi[-take:])
            del stack_lo[-take:]
            del stack_hi[-take:]
            explored += take
            table = self._intervals(lo, hi)
            possible, certain = _status(self.formula, table, take, 0.0)
            if certain.any():
                k = int(np.flatnonzero(certain)[0])
                return Result("delta-sat", self.delta, np.stack([lo[k], hi[k]], axis=1), explored)
            # exact witness at box midpoints
            mid = 0.5 * (lo + hi)
            mtable = self._intervals(mid, mid)
            _, mcert = _status(self.formula, mtable, take, 0.0)
            if mcert.any():
                k = int(np.flatnonzero(mcert)[0])
                return Result("delta-sat", self.delta, np.stack([mid[k], mid[k]], axis=1), explored)
            width = hi - lo
            small = width.max(axis=1) <= self.delta
            hit = possible & small
            if hit.any():
                k = int(np.flatnonzero(hit)[0])
                return Result("delta-sat", self.delta, np.stack([lo[k], hi[k]], axis=1), explored)
            keep = np.flatnonzero(possible & ~small)
            if keep.size == 0:
                continue
            lo, hi, width = lo[keep], hi[keep], width[keep]
            axis = width.argmax(axis=1)
            rows = np.arange(keep.size)
            cut = 0.5 * (lo[rows, axis] + hi[rows, axis])
            left_hi = hi.copy()
            left_hi[rows, axis] = cut
            right_lo = lo.copy()
            right_lo[rows, axis] = cut
            # reversed so that boxes are explored in a stable depth-first order
            for i in range(keep.size - 1, -1, -1):
                stack_lo.append(right_lo[i])
                stack_hi.append(hi[i])
                stack_lo.append(lo[i])
                stack_hi.append(left_hi[i])
        return Result("unsat", self.delta, None, explored)


def solve_script(text: str, precision: float = 1e-4, deadline: float | None = None) -> tuple[Script, Result]:
    sc = parse_script(text)
    formula = E.conj(*sc.assertions) if sc.assertions else E.TRUE
    n = len(sc.variables)
    box = contract(formula, n)
    if box is None:
        return sc, Result("unsat", precision)
    for name, b in zip(sc.variables, box):
        if b[1] - b[0] >= BIG:
            raise ICPError(f"variable {name} is unbounded; add bounds to the formula")
    return sc, Solver(formula, n, precision).solve(box, deadline=deadline)


def format_result(sc: Script, res: Result, model: bool) -> str:
    if res.status == "unsat":
        return "unsat\n"
    lines = [f"delta-sat with delta = {res.delta!r}"]
    if model and res.box is not None:
        for name, (lo, hi) in zip(sc.variables, res.box):
            lines.append(f"{name} : [{float(lo)!r}, {float(hi)!r}]")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="certsynth-icp", description=__doc__.splitlines()[0])
    ap.add_argument("script")
    ap.add_argument("--precision", type=float, default=1e-3)
    ap.add_argument("--model", action="store_true", help="print a witness box on delta-sat")
    args = ap.parse_args(argv)
    try:
        with open(args.script) as fh:
            text = fh.read()
        sc, res = solve_script(text, args.precision)
    except (ICPError, E.ExprError, OSError, IndexError, ValueError) as exc:
        print(f'(error "{exc}")')
        return 1
    sys.stdout.write(format_result(sc, res, args.model))
    return 0


if __name__ == "__main__":
    sys.exit(main())
