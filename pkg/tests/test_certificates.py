import numpy as np
import pytest
import torch

from certsynth import expr as E
from certsynth import nnet
from certsynth.certificates import (BAND, EPS_LEARN, EPS_V, REQUIRED_SETS, TWO_FUNCTION, CandidateExpressions,
                                    CertificateError, CertificateKind, check_sets, check_time_domain, conditions,
                                    constraint_groups, control_loss, loss_from_values)
from certsynth.domains import Rectangle, Sphere
from certsynth.models import DynamicalModel

K = CertificateKind
CUBIC = DynamicalModel.from_strings(["x1 - x0**3", "-x0"])


def test_kind_names():
    assert [k.value for k in K] == ["Lyapunov", "ROA", "Barrier", "SWA", "RWA", "RSWA", "RAR"]
    assert K.parse("lyapunov") is K.LYAPUNOV
    assert K.parse("RAR") is K.RAR
    with pytest.raises(CertificateError):
        K.parse("Stability2")


def test_required_sets():
    assert set(REQUIRED_SETS[K.LYAPUNOV]) == {"XD"}
    assert set(REQUIRED_SETS[K.RAR]) == {"XD", "XS", "XI", "XG", "XF"}
    assert set(REQUIRED_SETS[K.RSWA]) == {"XD", "XI", "XS", "XF"}
    with pytest.raises(CertificateError):
        check_sets(K.BARRIER, {"XD": Sphere([0], 1.0), "XI": Sphere([0], 0.5)})


def test_time_domain_applicability():
    check_time_domain(K.LYAPUNOV, True)
    check_time_domain(K.BARRIER, True)
    for k in (K.ROA, K.SWA, K.RWA, K.RSWA, K.RAR):
        with pytest.raises(CertificateError):
            check_time_domain(k, True)


def test_lyapunov_loss_example():
    # V = [-0.2, 0.3], Vdot = [0.1, -0.5], margin 0: 0.1 + 0.05
    x = torch.ones(2, 2, dtype=torch.float64)
    vals = {("XD", "V", "value"): torch.tensor([-0.2, 0.3], dtype=torch.float64),
            ("XD", "V", "lie"): torch.tensor([0.1, -0.5], dtype=torch.float64)}
    res = loss_from_values(conditions(K.LYAPUNOV), vals, {"XD": x}, margin=0.0)
    assert float(res.loss) == pytest.approx(0.15, abs=1e-15)
    assert res.violations == {"positive": 1, "decrease": 1}


def test_loss_zero_when_slack_exceeds_margin():
    x = torch.full((3, 2), 0.5, dtype=torch.float64)
    vals = {("XD", "V", "value"): torch.full((3,), 2.0, dtype=torch.float64),
            ("XD", "V", "lie"): torch.full((3,), -2.0, dtype=torch.float64)}
    assert float(loss_from_values(conditions(K.LYAPUNOV), vals, {"XD": x}).loss) == 0.0


def test_barrier_initial_term():
    conds = [c for c in conditions(K.BARRIER) if c.name == "initial"]
    vals = {("XI", "V", "value"): torch.tensor([0.3], dtype=torch.float64)}
    res = loss_from_values(conds, vals, {"XI": torch.zeros(1, 1, dtype=torch.float64)})
    assert float(res.loss) == pytest.approx(0.3 + EPS_LEARN)


def test_control_loss_examples():
    x = torch.tensor([[1.0, 2.0], [-3.0, 0.5]], dtype=torch.float64)
    ctrl = nnet.Network(2, [2], [nnet.LINEAR], n_outputs=2)
    with torch.no_grad():
        ctrl.weights[0].copy_(torch.eye(2))
        ctrl.weights[1].copy_(-torch.eye(2))
    model = DynamicalModel.from_strings(["u0", "u1"])
    assert float(control_loss(model, ctrl, x).detach()) == pytest.approx(-1.0, abs=1e-8)
    with torch.no_grad():
        ctrl.weights[1].copy_(torch.eye(2))
    assert float(control_loss(model, ctrl, x).detach()) == pytest.approx(1.0, abs=1e-8)
    # lambda = 1, constant u = 2, one sample: quadratic term adds 4
    const = nnet.Network(1, [1], [nnet.LINEAR], bias=True)
    with torch.no_grad():
        for w in const.weights:
            w.zero_()
        const.biases[0].zero_()
        const.biases[1].fill_(2.0)
    m1 = DynamicalModel.from_strings(["-x0 + 0*u0"])
    base = float(control_loss(m1, const, torch.tensor([[1.0]], dtype=torch.float64)).detach())
    with_q = float(control_loss(m1, const, torch.tensor([[1.0]], dtype=torch.float64), weight=1.0).detach())
    assert with_q - base == pytest.approx(4.0)


def test_two_function_kinds_union():
    lyap = {c.name for c in conditions(K.LYAPUNOV)}
    barr = {c.name for c in conditions(K.BARRIER)}
    swa = {c.name for c in conditions(K.SWA)}
    assert swa == {f"V.{n}" for n in lyap} | {f"B.{n}" for n in barr}
    rwa = {c.name for c in conditions(K.RWA)}
    rar = {c.name for c in conditions(K.RAR)}
    assert rar == rwa | {"W.goal", "W.final", "W.flow"}
    assert TWO_FUNCTION == {K.SWA, K.RAR}


def test_lyapunov_group_shape():
    v = E.parse("x0**2 + x1**2")
    groups = constraint_groups(K.LYAPUNOV, CandidateExpressions(v), {"XD": Sphere([0, 0], 1.0)}, CUBIC)
    assert [g.name for g in groups] == ["positive", "decrease"]
    dec = groups[1].formula
    # x0 = 0, x1 = 0.5 satisfies the negated decrease condition (Vdot = -2 x0^4 = 0)
    assert E.eval_formula(dec, np.array([[0.0, 0.5]]))[0]
    assert not E.eval_formula(dec, np.array([[0.0, 0.0]]))[0]  # origin excluded
    assert not E.eval_formula(dec, np.array([[0.3, 0.5]]))[0]


def test_barrier_toy_groups_hold_numerically():
    m = DynamicalModel.from_strings(["-x0"])
    sets = {"XD": Rectangle([-5], [5]), "XI": Rectangle([-0.5], [0.5]), "XU": Rectangle([2], [3])}
    groups = constraint_groups(K.BARRIER, CandidateExpressions(E.parse("x0 - 1")), sets, m)
    grid = np.linspace(-5, 5, 100_001).reshape(-1, 1)
    for g in groups:
        assert not E.eval_formula(g.formula, grid).any(), g.name


def test_rswa_containment_is_membership():
    m = DynamicalModel.from_strings(["x1", "-x0 - x1"])
    sets = {"XD": Rectangle([-3.5, -3.5], [3.5, 3.5]), "XS": Rectangle([-3, -3], [3, 3]),
            "XI": Rectangle([-1, -1], [1, 1]), "XF": Rectangle([-0.2, -0.2], [0.2, 0.2])}
    v = E.parse("x0**2 + x1**2 - 4")
    groups = {g.name: g for g in constraint_groups(K.RSWA, CandidateExpressions(v, levels={"gamma": -3.99}), sets, m)}
    pts = np.random.default_rng(0).uniform(-3, 3, (20_000, 2))
    hits = E.eval_formula(groups["containment"].formula, pts)
    vv = E.eval_batch(v, pts)
    outside_f = ~sets["XF"].contains(pts)
    np.testing.assert_array_equal(hits, (vv <= -3.99) & outside_f)


def test_constants():
    assert (EPS_LEARN, EPS_V, BAND) == (0.05, 1e-4, 1e-4)
