"""Small feed-forward networks used as certificate and controller templates.

Parameters are float64 torch tensors so parameter gradients come from
autograd; the input gradient is accumulated explicitly (reverse order through
the layers) so it is itself differentiable with respect to the parameters.
``to_expression`` unrolls the same arithmetic into the expression IR.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import expr as E

DTYPE = torch.float64


class NetworkError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Activation:
    name: str
    order: int = 1

    def __post_init__(self):
        if self.name == "POLY" and self.order < 1:
            raise NetworkError("polynomial activation order must be >= 1")

    @property
    def label(self) -> str:
        if self.name == "POLY":
            return {1: "LINEAR", 2: "SQUARE"}.get(self.order, f"POLY_{self.order}")
        return self.name

    @property
    def zero_fixing(self) -> bool:
        """Maps 0 to 0, so a bias-free network vanishes at the origin."""
        return self.name in ("POLY", "TANH", "RELU")

    @property
    def smt_encodable(self) -> bool:
        return self.name != "RELU"

    @property
    def polynomial(self) -> bool:
        return self.name == "POLY"

    def __str__(self):
        return self.label


LINEAR = Activation("POLY", 1)
SQUARE = Activation("POLY", 2)
SIGMOID = Activation("SIGMOID")
TANH = Activation("TANH")
SOFTPLUS = Activation("SOFTPLUS")
RELU = Activation("RELU")


def poly(order: int) -> Activation:
    return Activation("POLY", order)


def parse_activation(name: str) -> Activation:
    key = str(name).strip().upper()
    fixed = {"LINEAR": LINEAR, "SQUARE": SQUARE, "SIGMOID": SIGMOID, "TANH": TANH, "SOFTPLUS": SOFTPLUS, "RELU": RELU}
    if key in fixed:
        return fixed[key]
    if key.startswith("POLY_"):
        try:
            return poly(int(key[5:]))
        except ValueError:
            pass
    raise NetworkError(f"unknown activation {name!r}")


def _act(a: Activation, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Activation value and derivative."""
    if a.name == "POLY":
        if a.order == 1:
            return z, torch.ones_like(z)
        return z**a.order, a.order * z ** (a.order - 1)
    if a.name == "SIGMOID":
        s = torch.sigmoid(z)
        return s, s * (1 - s)
    if a.name == "TANH":
        t = torch.tanh(z)
        return t, 1 - t * t
    if a.name == "SOFTPLUS":
        return torch.nn.functional.softplus(z), torch.sigmoid(z)
    if a.name == "RELU":
        return torch.relu(z), (z > 0).to(z.dtype)
    raise NetworkError(a.name)


def _act_expr(a: Activation, z: E.Expr) -> E.Expr:
    if a.name == "POLY":
        return E.power(z, a.order)
    if a.name == "SIGMOID":
        return E.sigmoid(z)
    if a.name == "TANH":
        return E.tanh(z)
    if a.name == "SOFTPLUS":
        return E.softplus(z)
    raise NetworkError(f"{a.label} has no exact symbolic encoding")


class Network:
    """Fully connected network ``n_inputs -> hidden... -> n_outputs``.

    Hidden layers apply their activation; the output layer is affine.  With
    ``bias=False`` there are no bias terms at all.
    """

    def __init__(
        self,
        n_inputs: int,
        hidden: Sequence[int],
        activations: Sequence[Activation],
        n_outputs: int = 1,
        bias: bool = False,
        seed: int = 0,
        levels: Sequence[str] = (),
    ):
        hidden = [int(h) for h in hidden]
        activations = list(activations)
        if len(hidden) != len(activations):
            raise NetworkError(f"{len(hidden)} hidden layers but {len(activations)} activations")
        if any(h <= 0 for h in hidden) or n_inputs <= 0 or n_outputs <= 0:
            raise NetworkError("layer widths must be positive")
        self.n_inputs = int(n_inputs)
        self.hidden = hidden
        self.activations = activations
        self.n_outputs = int(n_outputs)
        self.bias = bool(bias)
        self.seed = int(seed)

        gen = torch.Generator().manual_seed(self.seed)
        widths = [self.n_inputs, *hidden, self.n_outputs]
        self.weights: list[torch.Tensor] = []
        self.biases: list[torch.Tensor | None] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            w = (torch.rand(fan_out, fan_in, generator=gen, dtype=DTYPE) * 2 - 1) * bound
            self.weights.append(w.requires_grad_(True))
            if self.bias:
                b = (torch.rand(fan_out, generator=gen, dtype=DTYPE) * 2 - 1) * bound
                self.biases.append(b.requires_grad_(True))
            else:
                self.biases.append(None)
        self.levels: dict[str, torch.Tensor] = {
            name: torch.zeros((), dtype=DTYPE, requires_grad=True) for name in levels
        }

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[torch.Tensor]:
        params = list(self.weights)
        params += [b for b in self.biases if b is not None]
        params += [self.levels[k] for k in sorted(self.levels)]
        return params

    def level(self, name: str) -> float:
        return float(self.levels[name].detach())

    @property
    def widths(self) -> list[int]:
        return [self.n_inputs, *self.hidden, self.n_outputs]

    # -- numeric ----------------------------------------------------------

    def _layers(self, x: torch.Tensor):
        h = x
        pre = []
        for w, b, a in zip(self.weights[:-1], self.biases[:-1], self.activations):
            z = h @ w.T
            if b is not None:
                z = z + b
            h, dh = _act(a, z)
            pre.append(dh)
        out = h @ self.weights[-1].T
        if self.biases[-1] is not None:
            out = out + self.biases[-1]
        return out, pre

    @staticmethod
    def _as_tensor(x) -> torch.Tensor:
        if isinstance(x, torch.Tensor):
            return x.to(DTYPE)
        return torch.as_tensor(np.asarray(x, dtype=np.float64))

    def forward(self, x) -> torch.Tensor:
        """Outputs, shape (N, n_outputs)."""
        return self._layers(self._as_tensor(x))[0]

    def forward_with_gradient(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        """Outputs (N, k) and input gradients (N, k, n).

        The gradient is accumulated from the output layer backwards, one
        Jacobian-vector product per layer, using only differentiable ops.
        """
        x = self._as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise NetworkError(f"expected states of shape (N, {self.n_inputs}), got {tuple(x.shape)}")
        out, pre = self._layers(x)
        g = self.weights[-1].unsqueeze(0).expand(x.shape[0], -1, -1)
        for w, dh in zip(reversed(self.weights[:-1]), reversed(pre)):
            g = (g * dh.unsqueeze(1)) @ w
        return out, g

    def predict(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.forward(x).numpy()

    # -- symbolic ---------------------------------------------------------

    def to_expression(self, inputs: Sequence[E.Expr] | None = None) -> list[E.Expr]:
        """Exact unrolling into the expression IR, one expression per output."""
        if inputs is None:
            inputs = [E.Var(i) for i in range(self.n_inputs)]
        if len(inputs) != self.n_inputs:
            raise NetworkError(f"expected {self.n_inputs} input expressions, got {len(inputs)}")
        h = list(inputs)
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            wn = w.detach().numpy()
            bn = None if b is None else b.detach().numpy()
            z = []
            for j in range(wn.shape[0]):
                acc = E.total(E.mul(E.Const(wn[j, k]), h[k]) for k in range(wn.shape[1]))
                if bn is not None:
                    acc = E.add(acc, E.Const(bn[j]))
                z.append(acc)
            if li < len(self.activations):
                h = [_act_expr(self.activations[li], zj) for zj in z]
            else:
                h = z
        return h

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "activations": [a.label for a in self.activations],
            "bias": self.bias,
            "weights": [w.detach().numpy().tolist() for w in self.weights],
            "biases": [None if b is None else b.detach().numpy().tolist() for b in self.biases],
            "levels": {k: self.level(k) for k in sorted(self.levels)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        widths = data["widths"]
        net = cls(
            widths[0],
            widths[1:-1],
            [parse_activation(a) for a in data["activations"]],
            n_outputs=widths[-1],
            bias=data.get("bias", False),
            levels=tuple(data.get("levels", {})),
        )
        with torch.no_grad():
            for w, values in zip(net.weights, data["weights"]):
                w.copy_(torch.tensor(values, dtype=DTYPE))
            for b, values in zip(net.biases, data.get("biases", [])):
                if b is not None and values is not None:
                    b.copy_(torch.tensor(values, dtype=DTYPE))
            for k, v in data.get("levels", {}).items():
                net.levels[k].fill_(float(v))
        return net

    def __repr__(self):
        acts = ",".join(a.label for a in self.activations)
        return f"Network({self.widths}, [{acts}], bias={self.bias})"


def init(
    hidden: Sequence[int],
    activations: Sequence[Activation],
    bias: bool,
    seed: int,
    n_inputs: int = 2,
    n_outputs: int = 1,
    levels: Sequence[str] = (),
) -> Network:
    return Network(n_inputs, hidden, activations, n_outputs=n_outputs, bias=bias, seed=seed, levels=levels)


def parameter_gradients(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar loss; raises on non-finite values."""
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    out = []
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise TrainingError("non-finite parameter gradient")
        out.append(g)
    return out
