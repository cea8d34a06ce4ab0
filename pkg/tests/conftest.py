import shutil

import pytest
from hypothesis import strategies as st

from certsynth import expr as E

FUNCS = sorted(E.TRANSCENDENTAL)
consts = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False).map(E.Const)
leaves = st.one_of(consts, st.integers(0, 2).map(E.Var), st.integers(0, 1).map(E.Input))


def _extend(children):
    return st.one_of(
        children.map(E.Neg),
        st.tuples(st.sampled_from([E.Add, E.Sub, E.Mul, E.Div]), children, children).map(lambda t: t[0](t[1], t[2])),
        st.tuples(children, st.integers(0, 4)).map(lambda t: E.Pow(*t)),
        st.tuples(st.sampled_from(FUNCS), children).map(lambda t: E.Call(t[0], t[1])),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


def _smooth_extend(children):
    # no division, log or wide exponents: finite differences stay well conditioned
    return st.one_of(
        children.map(E.Neg),
        st.tuples(st.sampled_from([E.Add, E.Sub, E.Mul]), children, children).map(lambda t: t[0](t[1], t[2])),
        st.tuples(children, st.integers(0, 3)).map(lambda t: E.Pow(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "tanh", "sigmoid", "softplus"]), children).map(lambda t: E.Call(*t)),
    )


small_consts = st.floats(min_value=-2, max_value=2, allow_nan=False).map(E.Const)
smooth_trees = st.recursive(st.one_of(small_consts, st.integers(0, 2).map(E.Var)), _smooth_extend, max_leaves=8)


def have_cvc5() -> bool:
    try:
        import cvc5  # noqa: F401
    except ImportError:
        return False
    return True


needs_z3 = pytest.mark.skipif(shutil.which("z3") is None, reason="z3 binary not on PATH")
needs_cvc5 = pytest.mark.skipif(not have_cvc5(), reason="cvc5 bindings not installed")
