"""Dynamical models, closed-loop composition and a fixed-step simulator."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import expr as E
from .nnet import Network


class ModelError(ValueError):
    pass


class TimeDomain(str, enum.Enum):
    CONTINUOUS = "CONTINUOUS"
    DISCRETE = "DISCRETE"


@dataclass(frozen=True)
class DynamicalModel:
    """``x' = f(x, u)`` (continuous) or ``x+ = f(x, u)`` (discrete)."""

    n_vars: int
    field: tuple[E.Expr, ...]
    n_inputs: int = 0
    time_domain: TimeDomain = TimeDomain.CONTINUOUS

    def __post_init__(self):
        object.__setattr__(self, "field", tuple(self.field))
        object.__setattr__(self, "time_domain", TimeDomain(self.time_domain))
        if len(self.field) != self.n_vars:
            raise ModelError(f"field has {len(self.field)} components for {self.n_vars} state variables")
        for i, comp in enumerate(self.field):
            nv, nu = E.max_indices(comp)
            if nv > self.n_vars:
                raise ModelError(f"component {i} uses x{nv - 1} but n_vars={self.n_vars}")
            if nu > self.n_inputs:
                raise ModelError(f"component {i} uses u{nu - 1} but n_inputs={self.n_inputs}")

    @classmethod
    def from_strings(cls, system: Sequence[str], n_inputs: int | None = None, time_domain="CONTINUOUS"):
        n = len(system)
        parsed = [E.parse(s, n_vars=n) for s in system]
        if n_inputs is None:
            n_inputs = max((E.max_indices(p)[1] for p in parsed), default=0)
        return cls(n, tuple(parsed), n_inputs, TimeDomain(time_domain))

    @property
    def autonomous(self) -> bool:
        return self.n_inputs == 0

    @property
    def discrete(self) -> bool:
        return self.time_domain is TimeDomain.DISCRETE

    def system_strings(self) -> list[str]:
        return [E.print_infix(c) for c in self.field]

    def is_polynomial(self) -> bool:
        return all(E.is_polynomial(c) for c in self.field)

    # numeric evaluation ----------------------------------------------------

    def f_numpy(self, x, u=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if u is not None:
            u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        with np.errstate(over="ignore", invalid="ignore"):
            cols = E.evaluate_many(list(self.field), x, u)
        return np.stack(cols, axis=1)

    def f_torch(self, x: torch.Tensor, u: torch.Tensor | None = None) -> torch.Tensor:
        cols = E.evaluate_many(list(self.field), x, u, ops=E.TorchOps)
        return torch.stack(cols, dim=1)

    def closed_field(self) -> tuple[E.Expr, ...]:
        if not self.autonomous:
            raise ModelError("model has control inputs; close the loop first")
        return self.field


@dataclass(frozen=True)
class ClosedLoopModel(DynamicalModel):
    """Autonomous model obtained by substituting ``u := controller(x)``."""

    open_loop: DynamicalModel | None = field(default=None, compare=False)
    controller: Network | None = field(default=None, compare=False)

    def f_torch(self, x, u=None):
        # keeps the controller parameters on the autograd tape
        return self.open_loop.f_torch(x, self.controller.forward(x))


def close_loop(model: DynamicalModel, controller: Network) -> ClosedLoopModel:
    if model.autonomous:
        raise ModelError("cannot close the loop of an autonomous model")
    if controller.n_inputs != model.n_vars or controller.n_outputs != model.n_inputs:
        raise ModelError(
            f"controller maps {controller.n_inputs}->{controller.n_outputs}, "
            f"model needs {model.n_vars}->{model.n_inputs}"
        )
    ctrl = controller.to_expression()
    closed = tuple(E.substitute(c, inputs=ctrl) for c in model.field)
    return ClosedLoopModel(model.n_vars, closed, 0, model.time_domain, open_loop=model, controller=controller)


def close_loop_with_expressions(model: DynamicalModel, controller: Sequence[E.Expr]) -> DynamicalModel:
    """Closed loop from an already symbolic feedback law (verification-only runs)."""
    if len(controller) != model.n_inputs:
        raise ModelError(f"{len(controller)} controller expressions for {model.n_inputs} inputs")
    closed = tuple(E.substitute(c, inputs=list(controller)) for c in model.field)
    return DynamicalModel(model.n_vars, closed, 0, model.time_domain)


# ---------------------------------------------------------------------------
# Lie derivative / discrete decrement


def lie_numeric(model: DynamicalModel, values, gradients, states=None, fn=None):
    """Batched derivative of a scalar function along the model.

    Continuous: ``sum_i dV/dx_i * f_i(x)`` from ``gradients`` (N, n), or
    (N, 1, n) as returned by ``Network.forward_with_gradient``.
    Discrete: ``V(f(x)) - V(x)``; needs ``states`` and the callable ``fn``.
    Works for torch tensors (training) and numpy arrays.
    """
    if gradients is not None and gradients.ndim == 3:
        gradients = gradients[:, 0, :]
    if model.discrete:
        if fn is None or states is None:
            raise ModelError("discrete decrement needs the function and the states")
        nxt = model.f_torch(states) if isinstance(states, torch.Tensor) else model.f_numpy(states)
        return fn(nxt) - values
    f = model.f_torch(states) if isinstance(gradients, torch.Tensor) else model.f_numpy(states)
    return (gradients * f).sum(axis=1) if isinstance(gradients, np.ndarray) else (gradients * f).sum(dim=1)


def lie_symbolic(model: DynamicalModel, v: E.Expr) -> E.Expr:
    field_ = model.closed_field()
    if model.discrete:
        return E.sub(E.substitute(v, states=list(field_)), v)
    return E.total(E.mul(E.differentiate(v, i), fi) for i, fi in enumerate(field_))


def lie_update(model: DynamicalModel, values, gradients, expression: E.Expr, states=None, fn=None):
    """Numeric batch and symbolic expression of the Lie derivative (or decrement)."""
    return lie_numeric(model, values, gradients, states, fn), lie_symbolic(model, expression)


# ---------------------------------------------------------------------------
# simulation


def simulate(model: DynamicalModel, x0, horizon: float | int, dt: float = 0.01) -> np.ndarray:
    """Trajectory rows ``(t, x0, ..., x{n-1})``.

    Continuous models use fixed-step RK4 over ``horizon`` time units;
    discrete models iterate the map ``horizon`` times (``dt`` ignored).
    A non-finite state stops the run and returns the rows computed so far.
    """
    if not model.autonomous:
        raise ModelError("simulate needs an autonomous or closed-loop model")
    x = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != model.n_vars:
        raise ModelError(f"initial state has {x.shape[1]} entries, model has {model.n_vars}")
    f = model.f_numpy
    rows = [np.concatenate([[0.0], x[0]])]
    if model.discrete:
        steps, step_t = int(horizon), 1.0
    else:
        steps, step_t = int(round(horizon / dt)), dt
    t = 0.0
    for _ in range(steps):
        if model.discrete:
            x = f(x)
        else:
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += step_t
        if not np.all(np.isfinite(x)):
            break
        rows.append(np.concatenate([[t], x[0]]))
    return np.vstack(rows)


def trajectory_csv(rows: np.ndarray) -> str:
    n = rows.shape[1] - 1
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i}" for i in range(n)])
    for r in rows:
        writer.writerow([repr(float(v)) for v in r])
    return buf.getvalue()
