import numpy as np
import pytest

from certsynth import expr as E
from certsynth.certificates import CandidateExpressions, CertificateKind, condition_slack, constraint_groups
from certsynth.domains import Rectangle, Sphere
from certsynth.models import DynamicalModel
from certsynth.verifier import (Backend, CapabilityError, SolverKind, Verdict, classify, emit_script, model_value,
                                parse_model, run, verify_candidate, verify_groups)

from conftest import needs_cvc5, needs_z3
from smt_corpus import CORPUS

CUBIC = DynamicalModel.from_strings(["x1 - x0**3", "-x0"])
LYAP_SETS = {"XD": Sphere([0, 0], 1.0)}


def _groups(v="x0**2 + x1**2"):
    return constraint_groups(CertificateKind.LYAPUNOV, CandidateExpressions(E.parse(v)), LYAP_SETS, CUBIC)


def test_emission_is_deterministic():
    a = [emit_script(g, 2, "Z3") for g in _groups()]
    b = [emit_script(g, 2, "Z3") for g in _groups()]
    assert a == b
    text = a[1]
    assert text.startswith("; group decrease\n(set-logic QF_NRA)\n")
    assert "(declare-const x0 Real)" in text and "(check-sat)" in text
    assert text.rstrip().endswith("(exit)")
    assert "(declare-fun x0 () Real)" in emit_script(_groups()[1], 2, "DREAL")


def test_capability_check_names_term():
    g = _groups("x0**2 + sin(x1)**2")[0]
    with pytest.raises(CapabilityError, match="sin"):
        emit_script(g, 2, "Z3")
    emit_script(g, 2, "DREAL")


@pytest.mark.parametrize("text,value", [
    ("1.5", 1.5), ("(- 2.0)", -2.0), ("(/ 1.0 4.0)", 0.25), ("(- (/ 3 2))", -1.5),
    ("(root-obj (+ (^ x 2) (- 2)) 2)", 2**0.5), ("(root-obj (+ (^ x 2) (- 2)) 1)", -(2**0.5)),
])
def test_model_values(text, value):
    from certsynth.verifier import _sexprs
    assert model_value(_sexprs(text)[0]) == pytest.approx(value, rel=1e-12)


def test_parse_model_formats():
    z3 = "(\n  (define-fun x1 () Real\n    (/ 1.0 2.0))\n  (define-fun x0 () Real\n    0.0)\n)"
    np.testing.assert_array_equal(parse_model(z3, 2), [0.0, 0.5])
    dreal = "delta-sat with delta = 0.0001\nx0 : [0.25, 0.5]\nx1 : [-1, -1]\n"
    np.testing.assert_allclose(parse_model(dreal, 2), [0.375, -1.0])


def test_classify():
    assert classify("unsat\n", "", 0)[0] is Verdict.UNSAT
    assert classify("sat\n(model)", "", 0)[0] is Verdict.SAT
    assert classify("delta-sat with delta = 0.001\n", "", 0)[0] is Verdict.DELTA_SAT
    assert classify("unknown\n", "", 0)[0] is Verdict.SOLVER_ERROR
    assert classify("", "segfault", 139)[0] is Verdict.SOLVER_ERROR


def test_timeout_is_reported():
    # a tiny timeout on an interval search that cannot finish in time
    f = E.conj(E.Atom("=", E.parse("x0**2 + x1**2 + x2**2"), E.Const(1.0)),
               E.Atom("=", E.parse("x0*x1*x2"), E.Const(0.1924500897)))
    res = run(Backend(SolverKind.DREAL, timeout=0.05, precision=1e-12), emit_script(f, 3, "DREAL"), 3)
    assert res.verdict in (Verdict.TIMEOUT, Verdict.DELTA_SAT)


@needs_z3
def test_missing_executable_is_solver_error(tmp_path):
    res = run(Backend(SolverKind.Z3, executable=str(tmp_path / "nope")), "(check-sat)", 1)
    assert res.verdict is Verdict.SOLVER_ERROR


def _check_falsification(results, groups, model):
    # every SAT point really violates its condition (fidelity + negation soundness)
    by_name = {g.name: g for g in groups}
    for r in results:
        for p in r.points:
            g = by_name[r.name]
            assert E.eval_formula(g.formula, p[None, :], tol=1e-6)[0]
            slack = condition_slack(g.condition, CandidateExpressions(E.parse("x0**2 + x1**2")), model, p[None, :])
            assert slack[0] <= 1e-6


@pytest.mark.parametrize("kind", [pytest.param("Z3", marks=needs_z3), pytest.param("CVC5", marks=needs_cvc5)])
def test_cubic_quadratic_is_falsified(kind):
    groups = _groups()
    results = verify_groups(groups, 2, Backend(kind))
    assert results[0].verdict is Verdict.UNSAT
    assert results[1].verdict is Verdict.SAT
    (p,) = results[1].points
    assert abs(p[0]) <= 1e-6
    _check_falsification(results, groups, CUBIC)


@pytest.mark.parametrize("kind", [pytest.param("Z3", marks=needs_z3), pytest.param("CVC5", marks=needs_cvc5), "DREAL"])
def test_barrier_toy_is_valid(kind):
    m = DynamicalModel.from_strings(["-x0"])
    sets = {"XD": Rectangle([-5], [5]), "XI": Rectangle([-0.5], [0.5]), "XU": Rectangle([2], [3])}
    results = verify_candidate(CertificateKind.BARRIER, CandidateExpressions(E.parse("x0 - 1")), sets, m, Backend(kind))
    assert [r.verdict for r in results] == [Verdict.UNSAT] * 3


@needs_z3
def test_log_dir_keeps_scripts(tmp_path):
    verify_groups(_groups(), 2, Backend("Z3"), log_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["decrease.out", "decrease.smt2", "positive.out",
                                                          "positive.smt2"]


@needs_z3
@pytest.mark.parametrize("name,n,formula,expected", CORPUS, ids=[c[0] for c in CORPUS])
def test_corpus_against_hand_verdicts_z3(name, n, formula, expected):
    res = run(Backend("Z3"), emit_script(formula, n, "Z3"), n, name)
    assert res.verdict.value.lower() == expected
    for p in res.points:
        assert E.eval_formula(formula, p[None, :], tol=1e-6)[0]
