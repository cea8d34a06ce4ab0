import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from certsynth import expr as E
from certsynth import nnet

ACTS = [nnet.LINEAR, nnet.SQUARE, nnet.SIGMOID, nnet.TANH, nnet.SOFTPLUS, nnet.poly(3)]


@pytest.mark.parametrize("name,want", [("SQUARE", nnet.SQUARE), ("linear", nnet.LINEAR), ("Sigmoid", nnet.SIGMOID),
                                       ("POLY_3", nnet.poly(3)), ("relu", nnet.RELU)])
def test_parse_activation(name, want):
    assert nnet.parse_activation(name) == want


def test_bad_activation_and_shapes():
    with pytest.raises(nnet.NetworkError):
        nnet.parse_activation("SWISH")
    with pytest.raises(nnet.NetworkError):
        nnet.Network(2, [3, 3], [nnet.SQUARE])


def test_square_net_by_hand():
    net = nnet.Network(2, [1], [nnet.SQUARE])
    with torch.no_grad():
        net.weights[0].copy_(torch.tensor([[1.0, 2.0]]))
        net.weights[1].copy_(torch.tensor([[3.0]]))
    x = np.array([[1.0, -1.0], [0.5, 0.5]])
    # 3 * (x0 + 2 x1)^2 and gradient 6 (x0 + 2 x1) * (1, 2)
    v, g = net.forward_with_gradient(x)
    np.testing.assert_allclose(v.detach().numpy()[:, 0], [3.0, 6.75])
    np.testing.assert_allclose(g.detach().numpy()[:, 0, :], [[-6.0, -12.0], [9.0, 18.0]])


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.sampled_from(ACTS), min_size=1, max_size=3), st.integers(0, 10_000), st.booleans(),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_gradient_matches_finite_difference(acts, seed, bias, point):
    net = nnet.Network(3, [4] * len(acts), acts, bias=bias, seed=seed)
    x = torch.tensor([point], dtype=torch.float64)
    _, g = net.forward_with_gradient(x)
    h = 1e-6
    for i in range(3):
        dx = torch.zeros_like(x)
        dx[0, i] = h
        with torch.no_grad():
            fd = float((net.forward(x + dx) - net.forward(x - dx))[0, 0]) / (2 * h)
        exact = float(g[0, 0, i].detach())
        assert abs(exact - fd) <= 1e-5 * max(1.0, abs(exact))


@pytest.mark.parametrize("acts", [[nnet.SQUARE], [nnet.SIGMOID, nnet.SQUARE], [nnet.TANH, nnet.LINEAR],
                                  [nnet.SOFTPLUS]])
def test_expression_matches_forward(acts):
    net = nnet.Network(2, [5] * len(acts), acts, n_outputs=2, bias=True, seed=4)
    exprs = net.to_expression()
    pts = np.random.default_rng(0).uniform(-2, 2, (1000, 2))
    want = net.predict(pts)
    for k, e in enumerate(exprs):
        np.testing.assert_allclose(E.eval_batch(e, pts), want[:, k], rtol=1e-9, atol=1e-12)
        # printed form reparses to the same numbers
        np.testing.assert_allclose(E.eval_batch(E.parse(E.print_infix(e)), pts), want[:, k], rtol=1e-12, atol=1e-12)


def test_autograd_agrees_with_manual_jacobian():
    net = nnet.Network(2, [6, 6], [nnet.SIGMOID, nnet.SQUARE], seed=2)
    x = torch.randn(20, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(0)).requires_grad_(True)
    v, g = net.forward_with_gradient(x)
    (auto,) = torch.autograd.grad(v.sum(), x)
    torch.testing.assert_close(g[:, 0, :], auto)


def test_seeded_init_and_serialisation():
    a = nnet.Network(2, [5], [nnet.SQUARE], seed=11, levels=("beta",))
    b = nnet.Network(2, [5], [nnet.SQUARE], seed=11, levels=("beta",))
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = nnet.Network.from_dict(a.to_dict())
    x = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_array_equal(a.predict(x), c.predict(x))
    assert c.levels.keys() == {"beta"}


def test_zero_fixing_flags():
    assert nnet.SQUARE.zero_fixing and nnet.TANH.zero_fixing
    assert not nnet.SIGMOID.zero_fixing and not nnet.SOFTPLUS.zero_fixing
    assert not nnet.RELU.smt_encodable
