"""Expression IR shared by the learner (numeric) and the verifier (symbolic).

Trees are built from immutable nodes.  The smart constructors (:func:`add`,
:func:`mul`, ...) fold constants and apply the 0/1 identities and nothing
else, so a numeric evaluation and the emitted SMT-LIB term always describe
the same arithmetic.
"""
from __future__ import annotations

import math
import re
from decimal import Decimal
from typing import Callable, Iterable, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sigmoid", "tanh", "softplus")
TRANSCENDENTAL = frozenset(FUNCTIONS)


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, source: str, position: int):
        super().__init__(f"{message} at position {position}: {source!r}")
        self.source = source
        self.position = position


class EvaluationError(ArithmeticError):
    def __init__(self, message: str, sample: int | None = None):
        super().__init__(message if sample is None else f"{message} (sample {sample})")
        self.sample = sample


# ---------------------------------------------------------------------------
# nodes


class Expr:
    __slots__ = ("_hash",)
    kind = "expr"

    def _key(self) -> tuple:
        raise NotImplementedError

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return type(self) is type(other) and self._key() == other._key()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({', '.join(map(repr, self._key()))})"

    def __str__(self) -> str:
        return print_infix(self)

    # operator sugar, used by tests and by the certificate builders
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)

    # comparisons build atoms; equality stays structural
    def __le__(self, other):
        return Atom("<=", self, as_expr(other))

    def __lt__(self, other):
        return Atom("<", self, as_expr(other))

    def __ge__(self, other):
        return Atom(">=", self, as_expr(other))

    def __gt__(self, other):
        return Atom(">", self, as_expr(other))


class Const(Expr):
    __slots__ = ("value",)
    kind = "const"

    def __init__(self, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise ExprError(f"non-finite constant {value}")
        if value == 0.0:
            value = 0.0  # drop the sign of -0.0
        self.value = value
        self._hash = hash(("const", value))

    def _key(self):
        return (self.value,)


class Var(Expr):
    """State variable ``x{index}``."""

    __slots__ = ("index",)
    kind = "var"

    def __init__(self, index: int):
        self.index = int(index)
        self._hash = hash(("var", self.index))

    def _key(self):
        return (self.index,)


class Input(Expr):
    """Control input ``u{index}``."""

    __slots__ = ("index",)
    kind = "input"

    def __init__(self, index: int):
        self.index = int(index)
        self._hash = hash(("input", self.index))

    def _key(self):
        return (self.index,)


class Neg(Expr):
    __slots__ = ("arg",)
    kind = "neg"

    def __init__(self, arg: Expr):
        self.arg = arg
        self._hash = hash(("neg", arg._hash))

    def _key(self):
        return (self.arg,)

    def children(self):
        return (self.arg,)


class _Binary(Expr):
    __slots__ = ("left", "right")
    symbol = "?"

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right
        self._hash = hash((self.kind, left._hash, right._hash))

    def _key(self):
        return (self.left, self.right)

    def children(self):
        return (self.left, self.right)


class Add(_Binary):
    __slots__ = ()
    kind = "add"
    symbol = "+"


class Sub(_Binary):
    __slots__ = ()
    kind = "sub"
    symbol = "-"


class Mul(_Binary):
    __slots__ = ()
    kind = "mul"
    symbol = "*"


class Div(_Binary):
    __slots__ = ()
    kind = "div"
    symbol = "/"


class Pow(Expr):
    __slots__ = ("base", "exponent")
    kind = "pow"

    def __init__(self, base: Expr, exponent: int):
        if int(exponent) != exponent or exponent < 0:
            raise ExprError(f"exponent must be a non-negative integer, got {exponent}")
        self.base = base
        self.exponent = int(exponent)
        self._hash = hash(("pow", base._hash, self.exponent))

    def _key(self):
        return (self.base, self.exponent)

    def children(self):
        return (self.base,)


class Call(Expr):
    """Unary function application: sin, cos, exp, log, sigmoid, tanh, softplus."""

    __slots__ = ("name", "arg")
    kind = "call"

    def __init__(self, name: str, arg: Expr):
        if name not in TRANSCENDENTAL:
            raise ExprError(f"unknown function {name!r}")
        self.name = name
        self.arg = arg
        self._hash = hash(("call", name, arg._hash))

    def _key(self):
        return (self.name, self.arg)

    def children(self):
        return (self.arg,)


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# smart constructors: constant folding and 0/1 identities only


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        raise ExprError("division by constant zero")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value**n)
    return Pow(a, n)


def call(name: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(float(_SCALAR_FUNCS[name](a.value)))
    return Call(name, a)


def total(terms: Iterable[Expr]) -> Expr:
    """Left-folded sum; the order of ``terms`` fixes the order of operations."""
    out: Expr = ZERO
    for t in terms:
        out = add(out, t)
    return out


def sin(a):
    return call("sin", as_expr(a))


def cos(a):
    return call("cos", as_expr(a))


def exp(a):
    return call("exp", as_expr(a))


def log(a):
    return call("log", as_expr(a))


def sigmoid(a):
    return call("sigmoid", as_expr(a))


def tanh(a):
    return call("tanh", as_expr(a))


def softplus(a):
    return call("softplus", as_expr(a))


def _sigmoid_scalar(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    z = math.exp(v)
    return z / (1.0 + z)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "tanh": math.tanh,
    "sigmoid": _sigmoid_scalar,
    "softplus": lambda v: math.log1p(math.exp(-abs(v))) + max(v, 0.0),
}


# ---------------------------------------------------------------------------
# traversal helpers


def postorder(roots: Sequence[Expr]) -> list[Expr]:
    """Unique nodes of the DAG spanned by ``roots``, children before parents."""
    seen: set[int] = set()
    order: list[Expr] = []
    stack: list[tuple[Expr, bool]] = [(r, False) for r in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            if id(node) not in seen:
                seen.add(id(node))
                order.append(node)
            continue
        if id(node) in seen:
            continue
        stack.append((node, True))
        for child in reversed(node.children()):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def _rebuild(node: Expr, kids: tuple[Expr, ...]) -> Expr:
    if isinstance(node, Neg):
        return neg(kids[0])
    if isinstance(node, Add):
        return add(*kids)
    if isinstance(node, Sub):
        return sub(*kids)
    if isinstance(node, Mul):
        return mul(*kids)
    if isinstance(node, Div):
        return div(*kids)
    if isinstance(node, Pow):
        return power(kids[0], node.exponent)
    if isinstance(node, Call):
        return call(node.name, kids[0])
    return node


def transform(roots: Sequence[Expr], leaf: Callable[[Expr], Expr | None]) -> list[Expr]:
    """Rebuild ``roots`` bottom-up, replacing leaves for which ``leaf`` returns an Expr."""
    memo: dict[int, Expr] = {}
    for node in postorder(roots):
        kids = node.children()
        if not kids:
            repl = leaf(node)
            memo[id(node)] = node if repl is None else repl
        else:
            new_kids = tuple(memo[id(k)] for k in kids)
            if all(a is b for a, b in zip(new_kids, kids)):
                memo[id(node)] = node
            else:
                memo[id(node)] = _rebuild(node, new_kids)
    return [memo[id(r)] for r in roots]


def substitute(e: Expr, states: Sequence[Expr] | None = None, inputs: Sequence[Expr] | None = None) -> Expr:
    """Replace ``x_i`` by ``states[i]`` and ``u_j`` by ``inputs[j]`` (``None`` keeps them)."""

    def leaf(node: Expr):
        if isinstance(node, Var) and states is not None:
            return states[node.index]
        if isinstance(node, Input) and inputs is not None:
            return inputs[node.index]
        return None

    return transform([e], leaf)[0]


def max_indices(e: Expr) -> tuple[int, int]:
    """(1 + largest state index, 1 + largest input index) used by ``e``."""
    nv = nu = 0
    for node in postorder([e]):
        if isinstance(node, Var):
            nv = max(nv, node.index + 1)
        elif isinstance(node, Input):
            nu = max(nu, node.index + 1)
    return nv, nu


def input_indices(e: Expr) -> set[int]:
    return {n.index for n in postorder([e]) if isinstance(n, Input)}


def functions_used(roots: Sequence[Expr]) -> set[str]:
    return {n.name for n in postorder(list(roots)) if isinstance(n, Call)}


def is_polynomial(e: Expr) -> bool:
    """True when ``e`` uses only +, -, *, integer powers and division by constants."""
    if functions_used([e]):
        return False
    for node in postorder([e]):
        if isinstance(node, Div) and any(isinstance(k, (Var, Input)) for k in postorder([node.right])):
            return False
    return True


def size(e: Expr) -> int:
    """Number of nodes in the (unshared) tree."""
    counts: dict[int, int] = {}
    for node in postorder([e]):
        counts[id(node)] = 1 + sum(counts[id(k)] for k in node.children())
    return counts[id(e)]


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            stripped = len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {source[pos + stripped]!r}", source, pos + stripped)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    # grammar, Python precedence:
    #   sum     := product (('+'|'-') product)*
    #   product := unary (('*'|'/') unary)*
    #   unary   := '-' unary | '+' unary | power
    #   power   := atom ['**' exponent]     (right-assoc via exponent := ['-'] unary-free int)
    #   atom    := number | name | name '(' sum ')' | '(' sum ')'

    def __init__(self, source: str, n_vars: int | None, n_inputs: int | None):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.n_vars = n_vars
        self.n_inputs = n_inputs

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        tok = self.take()
        if tok[1] != value:
            found = tok[1] or "end of input"
            raise ParseError(f"expected {value!r}, found {found!r}", self.source, tok[2])
        return tok

    def parse(self) -> Expr:
        e = self.sum()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", self.source, tok[2])
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.product()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def product(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok[1] == "-":
            self.take()
            nxt = self.peek()
            # a literal directly after unary minus is a negative constant,
            # unless it is the base of a power (-2**2 == -(2**2))
            if nxt[0] == "num" and self.tokens[self.i + 1][1] != "**":
                self.take()
                return Const(-float(nxt[1]))
            return Neg(self.unary())
        if tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "**":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        tok = self.take()
        if tok[1] == "(":
            n = self.exponent()
            self.expect(")")
            return n
        if tok[1] == "-":
            raise ParseError("negative exponent", self.source, tok[2])
        if tok[0] != "num":
            raise ParseError("exponent must be a non-negative integer literal", self.source, tok[2])
        value = float(tok[1])
        if value != int(value):
            raise ParseError(f"non-integer exponent {tok[1]}", self.source, tok[2])
        if self.peek()[1] == "**":
            raise ParseError("chained powers are not supported", self.source, self.peek()[2])
        return int(value)

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if text == "(":
            e = self.sum()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[1] == "(":
                if text not in TRANSCENDENTAL:
                    raise ParseError(f"unknown function {text!r}", self.source, pos)
                self.take()
                arg = self.sum()
                self.expect(")")
                return Call(text, arg)
            m = re.fullmatch(r"([xu])(\d+)", text)
            if m is None:
                raise ParseError(f"unknown identifier {text!r}", self.source, pos)
            idx = int(m.group(2))
            if m.group(1) == "x":
                if self.n_vars is not None and idx >= self.n_vars:
                    raise ParseError(f"state variable {text} out of range (n_vars={self.n_vars})", self.source, pos)
                return Var(idx)
            if self.n_inputs is not None and idx >= self.n_inputs:
                raise ParseError(f"input {text} out of range (n_inputs={self.n_inputs})", self.source, pos)
            return Input(idx)
        found = text or "end of input"
        raise ParseError(f"unexpected token {found!r}", self.source, pos)


def parse(source: str, n_vars: int | None = None, n_inputs: int | None = None) -> Expr:
    """Parse infix text such as ``"x1 - x0**3"`` into an expression tree.

    The tree mirrors the text exactly (no folding), except that a numeric
    literal directly preceded by unary minus becomes a negative constant.
    """
    return _Parser(str(source), n_vars, n_inputs).parse()


# ---------------------------------------------------------------------------
# infix printer

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_float(v: float) -> str:
    text = repr(float(v))
    if "e" in text or "E" in text:
        mantissa, exponent = text.split("e")
        if "." not in mantissa:
            mantissa += ".0"
        text = f"{mantissa}e{exponent}"
    return text


def print_infix(e: Expr) -> str:
    """Minimal-parenthesis infix text; ``parse(print_infix(e)) == e``."""
    return _infix(e)


def _infix(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_float(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Input):
        return f"u{e.index}"
    if isinstance(e, Call):
        return f"{e.name}({_infix(e.arg)})"
    if isinstance(e, Neg):
        inner = _infix(e.arg)
        if _needs_parens_under_neg(e.arg):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = _infix(e.base)
        if not _is_atomic(e.base):
            base = f"({base})"
        return f"{base}**{e.exponent}"
    if isinstance(e, _Binary):
        p = _PREC[e.kind]
        left = _infix(e.left)
        if _prec_of(e.left) < p:
            left = f"({left})"
        right = _infix(e.right)
        # left-associative: equal precedence on the right needs parens
        if _prec_of(e.right) <= p or (isinstance(e.right, Const) and e.right.value < 0):
            right = f"({right})"
        return f"{left} {e.symbol} {right}"
    raise TypeError(type(e))


def _is_atomic(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value >= 0
    return isinstance(e, (Var, Input, Call))


def _prec_of(e: Expr) -> int:
    if isinstance(e, Const) and e.value < 0:
        return 3  # prints like a unary minus
    return _PREC.get(e.kind, 5)


def _needs_parens_under_neg(arg: Expr) -> bool:
    if isinstance(arg, (Var, Input, Call, Pow)):
        return False
    if isinstance(arg, Const):
        return True  # -(2.0) keeps Neg(Const) distinct from Const(-2.0)
    return _prec_of(arg) < _PREC["neg"] or isinstance(arg, Neg)


# ---------------------------------------------------------------------------
# symbolic differentiation


def differentiate(e: Expr, wrt: int) -> Expr:
    """Exact partial derivative with respect to ``x{wrt}``."""
    memo: dict[int, Expr] = {}
    for node in postorder([e]):
        memo[id(node)] = _d(node, wrt, memo)
    return memo[id(e)]


def _d(node: Expr, wrt: int, memo: dict[int, Expr]) -> Expr:
    if isinstance(node, Const) or isinstance(node, Input):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == wrt else ZERO
    if isinstance(node, Neg):
        return neg(memo[id(node.arg)])
    if isinstance(node, Add):
        return add(memo[id(node.left)], memo[id(node.right)])
    if isinstance(node, Sub):
        return sub(memo[id(node.left)], memo[id(node.right)])
    if isinstance(node, Mul):
        da, db = memo[id(node.left)], memo[id(node.right)]
        return add(mul(da, node.right), mul(node.left, db))
    if isinstance(node, Div):
        da, db = memo[id(node.left)], memo[id(node.right)]
        if _is_const(db, 0.0):
            return div(da, node.right)
        return div(sub(mul(da, node.right), mul(node.left, db)), power(node.right, 2))
    if isinstance(node, Pow):
        db = memo[id(node.base)]
        n = node.exponent
        if n == 0:
            return ZERO
        return mul(mul(Const(n), power(node.base, n - 1)), db)
    if isinstance(node, Call):
        da = memo[id(node.arg)]
        if _is_const(da, 0.0):
            return ZERO
        a = node.arg
        if node.name == "sin":
            outer = call("cos", a)
        elif node.name == "cos":
            outer = neg(call("sin", a))
        elif node.name == "exp":
            outer = node
        elif node.name == "log":
            return div(da, a)
        elif node.name == "sigmoid":
            outer = mul(node, sub(ONE, node))
        elif node.name == "tanh":
            outer = sub(ONE, power(node, 2))
        elif node.name == "softplus":
            outer = call("sigmoid", a)
        else:  # pragma: no cover - guarded by Call
            raise ExprError(node.name)
        return mul(outer, da)
    raise TypeError(type(node))


def gradient(e: Expr, n_vars: int) -> list[Expr]:
    return [differentiate(e, i) for i in range(n_vars)]


# ---------------------------------------------------------------------------
# formulas


class Formula:
    __slots__ = ("_hash",)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Formula)
            and self._hash == other._hash
            and type(self) is type(other)
            and self._key() == other._key()
        )

    def _key(self) -> tuple:
        raise NotImplementedError

    def __and__(self, other):
        return conj(self, other)

    def __or__(self, other):
        return disj(self, other)

    def __invert__(self):
        return negate(self)

    def __repr__(self):
        return f"{type(self).__name__}{self._key()!r}"


class Atom(Formula):
    """``lhs op rhs`` with op one of ``< <= > >= =``."""

    __slots__ = ("op", "lhs", "rhs")
    OPS = ("<", "<=", ">", ">=", "=")

    def __init__(self, op: str, lhs: Expr, rhs: Expr):
        if op not in self.OPS:
            raise ExprError(f"unknown comparison {op!r}")
        self.op = op
        self.lhs = lhs
        self.rhs = rhs
        self._hash = hash(("atom", op, lhs._hash, rhs._hash))

    def _key(self):
        return (self.op, self.lhs, self.rhs)


class And(Formula):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Formula]):
        self.args = tuple(args)
        self._hash = hash(("and",) + tuple(a._hash for a in self.args))

    def _key(self):
        return self.args


class Or(Formula):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Formula]):
        self.args = tuple(args)
        self._hash = hash(("or",) + tuple(a._hash for a in self.args))

    def _key(self):
        return self.args


class Not(Formula):
    __slots__ = ("arg",)

    def __init__(self, arg: Formula):
        self.arg = arg
        self._hash = hash(("not", arg._hash))

    def _key(self):
        return (self.arg,)


class _Bool(Formula):
    __slots__ = ("value",)

    def __init__(self, value: bool):
        self.value = value
        self._hash = hash(("bool", value))

    def _key(self):
        return (self.value,)


TRUE = _Bool(True)
FALSE = _Bool(False)


def conj(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if a is TRUE or a == TRUE:
            continue
        if a == FALSE:
            return FALSE
        flat.extend(a.args if isinstance(a, And) else (a,))
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(flat)


def disj(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if a == FALSE:
            continue
        if a == TRUE:
            return TRUE
        flat.extend(a.args if isinstance(a, Or) else (a,))
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else Or(flat)


_FLIP = {"<": ">=", "<=": ">", ">": "<=", ">=": "<"}


def negate(f: Formula) -> Formula:
    """Logical negation, pushed through atoms where that is exact."""
    if isinstance(f, _Bool):
        return FALSE if f.value else TRUE
    if isinstance(f, Atom) and f.op in _FLIP:
        return Atom(_FLIP[f.op], f.lhs, f.rhs)
    if isinstance(f, Not):
        return f.arg
    return Not(f)


def formula_exprs(f: Formula) -> list[Expr]:
    out: list[Expr] = []

    def walk(g: Formula):
        if isinstance(g, Atom):
            out.extend((g.lhs, g.rhs))
        elif isinstance(g, (And, Or)):
            for a in g.args:
                walk(a)
        elif isinstance(g, Not):
            walk(g.arg)

    walk(f)
    return out


def substitute_formula(f: Formula, states: Sequence[Expr]) -> Formula:
    if isinstance(f, Atom):
        return Atom(f.op, substitute(f.lhs, states), substitute(f.rhs, states))
    if isinstance(f, And):
        return And([substitute_formula(a, states) for a in f.args])
    if isinstance(f, Or):
        return Or([substitute_formula(a, states) for a in f.args])
    if isinstance(f, Not):
        return Not(substitute_formula(f.arg, states))
    return f


# ---------------------------------------------------------------------------
# numeric evaluation


class NumpyOps:
    """Elementwise kernels over float64 arrays."""

    @staticmethod
    def const(v, like):
        return np.full(like.shape[0], v, dtype=np.float64)

    @staticmethod
    def sigmoid(a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        z = np.exp(a[~pos])
        out[~pos] = z / (1.0 + z)
        return out

    @staticmethod
    def softplus(a):
        return np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)

    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    exp = staticmethod(np.exp)
    log = staticmethod(np.log)
    tanh = staticmethod(np.tanh)

    @staticmethod
    def div(a, b):
        zero = np.flatnonzero(b == 0)
        if zero.size:
            raise EvaluationError("division by zero", int(zero[0]))
        return a / b

    @staticmethod
    def pow(a, n):
        out = a
        for _ in range(n - 1):
            out = out * a
        return out


class TorchOps:
    """Same kernels for torch tensors (autograd-friendly)."""

    @staticmethod
    def const(v, like):
        import torch

        return torch.full((like.shape[0],), v, dtype=like.dtype)

    @staticmethod
    def sigmoid(a):
        import torch

        return torch.sigmoid(a)

    @staticmethod
    def softplus(a):
        import torch

        return torch.nn.functional.softplus(a)

    @staticmethod
    def sin(a):
        return a.sin()

    @staticmethod
    def cos(a):
        return a.cos()

    @staticmethod
    def exp(a):
        return a.exp()

    @staticmethod
    def log(a):
        return a.log()

    @staticmethod
    def tanh(a):
        return a.tanh()

    @staticmethod
    def div(a, b):
        return a / b

    @staticmethod
    def pow(a, n):
        out = a
        for _ in range(n - 1):
            out = out * a
        return out


def evaluate_many(roots: Sequence[Expr], states, inputs=None, ops=NumpyOps) -> list:
    """Evaluate several expressions over a batch, sharing common subtrees.

    ``states`` has shape (N, n) and ``inputs`` shape (N, m); either numpy
    arrays or torch tensors, matched by ``ops``.  The operation order is a
    deterministic function of the expressions.
    """
    values: dict[int, object] = {}
    for node in postorder(list(roots)):
        if isinstance(node, Const):
            v = ops.const(node.value, states)
        elif isinstance(node, Var):
            v = states[:, node.index]
        elif isinstance(node, Input):
            if inputs is None:
                raise ExprError(f"expression uses u{node.index} but no inputs were given")
            v = inputs[:, node.index]
        elif isinstance(node, Neg):
            v = -values[id(node.arg)]
        elif isinstance(node, Add):
            v = values[id(node.left)] + values[id(node.right)]
        elif isinstance(node, Sub):
            v = values[id(node.left)] - values[id(node.right)]
        elif isinstance(node, Mul):
            v = values[id(node.left)] * values[id(node.right)]
        elif isinstance(node, Div):
            v = ops.div(values[id(node.left)], values[id(node.right)])
        elif isinstance(node, Pow):
            if node.exponent == 0:
                v = ops.const(1.0, states)
            else:
                v = ops.pow(values[id(node.base)], node.exponent)
        elif isinstance(node, Call):
            v = getattr(ops, node.name)(values[id(node.arg)])
        else:  # pragma: no cover
            raise TypeError(type(node))
        values[id(node)] = v
    return [values[id(r)] for r in roots]


def eval_batch(e: Expr, states, inputs=None) -> np.ndarray:
    """Evaluate ``e`` at every row of ``states`` (and ``inputs``)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if inputs is not None:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if inputs.size == 0:
            inputs = None
        elif inputs.shape[0] != states.shape[0]:
            raise ExprError(f"batch mismatch: {states.shape[0]} states vs {inputs.shape[0]} inputs")
    with np.errstate(over="ignore", invalid="ignore"):
        return evaluate_many([e], states, inputs)[0]


def eval_formula(f: Formula, states, tol: float = 0.0) -> np.ndarray:
    """Pointwise truth of ``f``; each atom is relaxed by ``tol`` in favour of truth."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    exprs = formula_exprs(f)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = evaluate_many(exprs, states) if exprs else []
    table = {id(e): v for e, v in zip(exprs, vals)}
    return _eval_formula(f, table, states.shape[0], tol)


def _eval_formula(f: Formula, table, n: int, tol: float) -> np.ndarray:
    if isinstance(f, _Bool):
        return np.full(n, f.value)
    if isinstance(f, Atom):
        d = table[id(f.lhs)] - table[id(f.rhs)]
        if f.op == "<":
            return d < tol if tol else d < 0
        if f.op == "<=":
            return d <= tol
        if f.op == ">":
            return d > -tol if tol else d > 0
        if f.op == ">=":
            return d >= -tol
        return np.abs(d) <= tol
    if isinstance(f, And):
        out = np.ones(n, dtype=bool)
        for a in f.args:
            out &= _eval_formula(a, table, n, tol)
        return out
    if isinstance(f, Or):
        out = np.zeros(n, dtype=bool)
        for a in f.args:
            out |= _eval_formula(a, table, n, tol)
        return out
    if isinstance(f, Not):
        # relaxation flips under negation
        return ~_eval_formula(f.arg, table, n, -tol if tol else 0.0)
    raise TypeError(type(f))


# ---------------------------------------------------------------------------
# SMT-LIB emission


def smt_number(v: float) -> str:
    """Exact decimal text of a double; negatives as ``(- 0.0 c)``."""
    if v < 0:
        return f"(- 0.0 {smt_number(-v)})"
    text = format(Decimal(float(v)), "f")
    if "." not in text:
        text += ".0"
    return text


_SMT_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _flatten(e: Expr, kind: str) -> list[Expr]:
    """Operands of a left-nested chain of ``kind`` (associative ops only)."""
    out = []
    while e.kind == kind:
        out.append(e.right)
        e = e.left
    out.append(e)
    out.reverse()
    return out


def _smt(e: Expr, names: dict[int, str] | None = None, top: bool = True) -> str:
    if names and not top and id(e) in names:
        return names[id(e)]
    if isinstance(e, Const):
        return smt_number(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Input):
        return f"u{e.index}"
    if isinstance(e, Neg):
        return f"(- 0.0 {_smt(e.arg, names, False)})"
    if isinstance(e, (Add, Mul)):
        ops = _flatten(e, e.kind)
        return f"({_SMT_OPS[e.kind]} {' '.join(_smt(o, names, False) for o in ops)})"
    if isinstance(e, (Sub, Div)):
        return f"({_SMT_OPS[e.kind]} {_smt(e.left, names, False)} {_smt(e.right, names, False)})"
    if isinstance(e, Pow):
        if e.exponent == 0:
            return "1.0"
        b = _smt(e.base, names, False)
        if e.exponent == 1:
            return b
        return f"(* {' '.join([b] * e.exponent)})"
    if isinstance(e, Call):
        a = _smt(e.arg, names, False)
        if e.name == "sigmoid":
            return f"(/ 1.0 (+ 1.0 (exp (- 0.0 {a}))))"
        if e.name == "softplus":
            return f"(log (+ 1.0 (exp {a})))"
        return f"({e.name} {a})"
    raise TypeError(type(e))


def to_smtlib(e: Expr) -> str:
    """Fully parenthesised SMT-LIB 2 term over reals ``x0..``, ``u0..``."""
    return _smt(e)


_SMT_CMP = {"<": "<", "<=": "<=", ">": ">", ">=": ">=", "=": "="}


def formula_to_smtlib(f: Formula, names: dict[int, str] | None = None) -> str:
    if isinstance(f, _Bool):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f"({_SMT_CMP[f.op]} {_smt(f.lhs, names, False)} {_smt(f.rhs, names, False)})"
    if isinstance(f, And):
        return f"(and {' '.join(formula_to_smtlib(a, names) for a in f.args)})"
    if isinstance(f, Or):
        return f"(or {' '.join(formula_to_smtlib(a, names) for a in f.args)})"
    if isinstance(f, Not):
        return f"(not {formula_to_smtlib(f.arg, names)})"
    raise TypeError(type(f))


def shared_definitions(f: Formula, min_size: int = 6) -> tuple[list[tuple[str, Expr]], dict[int, str]]:
    """Pick subterms used more than once (and not tiny) for ``define-fun`` sharing.

    Returns the definitions in dependency order plus the id->name map that
    :func:`formula_to_smtlib` uses to reference them.  Names follow
    first-occurrence order, so emission is deterministic.
    """
    roots = formula_exprs(f)
    order = postorder(roots)
    parents: dict[int, int] = {id(n): 0 for n in order}
    for node in order:
        for k in node.children():
            parents[id(k)] += 1
    for r in roots:
        parents[id(r)] += 1
    sizes: dict[int, int] = {}
    for node in order:
        sizes[id(node)] = 1 + sum(sizes[id(k)] for k in node.children())
    names: dict[int, str] = {}
    defs: list[tuple[str, Expr]] = []
    for node in order:
        if parents[id(node)] > 1 and sizes[id(node)] >= min_size:
            name = f"_t{len(defs)}"
            names[id(node)] = name
            defs.append((name, node))
    return defs, names


def definition_to_smtlib(e: Expr, names: dict[int, str]) -> str:
    return _smt(e, names, top=True)
