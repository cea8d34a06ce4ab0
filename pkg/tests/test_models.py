import math

import numpy as np
import pytest
import torch

from certsynth import expr as E
from certsynth import nnet
from certsynth.models import (DynamicalModel, ModelError, close_loop, close_loop_with_expressions, lie_numeric,
                              lie_symbolic, simulate, trajectory_csv)


def test_from_strings_counts_inputs():
    m = DynamicalModel.from_strings(["x1 - x0**3", "u0"])
    assert (m.n_vars, m.n_inputs) == (2, 1)
    assert not m.autonomous
    assert m.is_polynomial()
    with pytest.raises(ModelError):
        m.closed_field()


def test_lie_derivative_hand_expansion():
    # V = x0^2 + x1^2 on x1 - x0^3, -x0 gives Vdot = -2 x0^4
    m = DynamicalModel.from_strings(["x1 - x0**3", "-x0"])
    v = E.parse("x0**2 + x1**2")
    vdot = lie_symbolic(m, v)
    pts = np.random.default_rng(0).uniform(-2, 2, (500, 2))
    np.testing.assert_allclose(E.eval_batch(vdot, pts), -2 * pts[:, 0] ** 4, rtol=1e-12, atol=1e-12)
    grads = np.stack([2 * pts[:, 0], 2 * pts[:, 1]], axis=1)
    np.testing.assert_allclose(lie_numeric(m, None, grads, pts), -2 * pts[:, 0] ** 4, rtol=1e-12, atol=1e-12)


def test_discrete_decrement():
    m = DynamicalModel.from_strings(["0.5*x0", "0.5*x1"], time_domain="DISCRETE")
    v = E.parse("x0**2 + x1**2")
    pts = np.array([[1.0, 2.0]])
    assert E.eval_batch(lie_symbolic(m, v), pts)[0] == pytest.approx(-0.75 * 5)
    fn = lambda x: (x**2).sum(axis=1)
    assert lie_numeric(m, fn(pts), None, pts, fn)[0] == pytest.approx(-3.75)


def test_closed_loop_coherence():
    m = DynamicalModel.from_strings(["x1 - x0**3", "u0"])
    ctrl = nnet.Network(2, [5], [nnet.LINEAR], seed=3)
    cl = close_loop(m, ctrl)
    assert cl.autonomous
    pts = np.random.default_rng(1).uniform(-1, 1, (1000, 2))
    sym = cl.f_numpy(pts)
    num = cl.f_torch(torch.tensor(pts)).detach().numpy()
    np.testing.assert_allclose(sym, num, rtol=1e-9, atol=1e-9)
    exprs = close_loop_with_expressions(m, ctrl.to_expression())
    np.testing.assert_allclose(exprs.f_numpy(pts), num, rtol=1e-9, atol=1e-9)


def test_simulate_exponential_decay():
    m = DynamicalModel.from_strings(["-x0"])
    rows = simulate(m, [1.0], 1.0, dt=0.01)
    assert rows[-1, 0] == pytest.approx(1.0)
    assert rows[-1, 1] == pytest.approx(math.exp(-1), rel=1e-9)
    text = trajectory_csv(rows)
    assert text.splitlines()[0] == "t,x0"
    assert float(text.splitlines()[-1].split(",")[1]) == pytest.approx(math.exp(-1), rel=1e-9)


def test_simulate_discrete_map():
    m = DynamicalModel.from_strings(["0.5*x0"], time_domain="DISCRETE")
    rows = simulate(m, [8.0], 3)
    assert rows[:, 1].tolist() == [8.0, 4.0, 2.0, 1.0]


def test_simulate_stops_on_blow_up():
    m = DynamicalModel.from_strings(["x0**2"])
    rows = simulate(m, [10.0], 5.0, dt=0.1)
    assert np.isfinite(rows).all()
    assert rows.shape[0] < 51


def test_simulate_rejects_open_loop():
    with pytest.raises(ModelError):
        simulate(DynamicalModel.from_strings(["u0"]), [0.0], 1.0)
