"""Full-batch gradient training of certificate (and controller) networks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import torch

from .certificates import EPS_LEARN, Candidate, CertificateKind, control_loss, loss
from .models import DynamicalModel
from .nnet import TrainingError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 1000
    patience: int = 10  # stop once the loss has been exactly 0 this many epochs
    margin: float = EPS_LEARN
    control_weight: float = 0.0  # lambda on mean |u|^2

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ValueError("learning rate, epoch budget and patience must be positive")
        if self.control_weight < 0 or self.margin < 0:
            raise ValueError("margin and control weight must be non-negative")


@dataclass
class TrainResult:
    loss: float
    epochs: int
    learn_time: float
    violations: int
    history: list[float] = field(default_factory=list)
    violation_history: list[int] = field(default_factory=list)


class Learner:
    """Keeps the optimiser state across CEGIS iterations (warm start)."""

    def __init__(self, candidate: Candidate, cfg: TrainConfig = TrainConfig()):
        self.candidate = candidate
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(candidate.parameters(), lr=cfg.learning_rate)

    def train(self, kind: CertificateKind, data: Mapping[str, torch.Tensor], model: DynamicalModel) -> TrainResult:
        cfg, cand = self.cfg, self.candidate
        ctrl_x = None
        if cand.controller is not None:
            ctrl_x = data.get("XD")
            if ctrl_x is None:
                ctrl_x = torch.cat(list(data.values()))
        t0 = time.perf_counter()
        history, vhist = [], []
        zero_run = 0
        epochs = 0
        res = None
        for epoch in range(cfg.max_epochs):
            epochs = epoch + 1
            self.optimizer.zero_grad(set_to_none=True)
            res = loss(kind, cand, data, model, cfg.margin)
            total = res.loss
            if ctrl_x is not None:
                total = total + control_loss(model, cand.controller, ctrl_x, cfg.control_weight)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epochs}")
            value = float(res.loss.detach())
            history.append(value)
            vhist.append(res.total_violations)
            zero_run = zero_run + 1 if value == 0.0 else 0
            if zero_run >= cfg.patience:
                break
            total.backward()
            for p in cand.parameters():
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise TrainingError(f"non-finite parameter gradient at epoch {epochs}")
            self.optimizer.step()
        return TrainResult(history[-1] if history else 0.0, epochs, time.perf_counter() - t0,
                           res.total_violations if res else 0, history, vhist)


def train(candidate: Candidate, kind: CertificateKind, data, model: DynamicalModel, cfg: TrainConfig = TrainConfig()):
    """One-shot training with a fresh optimiser."""
    return Learner(candidate, cfg).train(kind, data, model)
