"""SGD with momentum and the epoch-wise step schedule."""
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Optional, Sequence

import numpy as np

from dpc.errors import ContractViolation
from dpc.graph.tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    lr0: float
    step_size: int = 3
    gamma: float = 0.9


def step_lr(epoch: int, schedule: Schedule) -> float:
    """``lr0 * gamma ** (epoch // step_size)``, computed in decimal so printed constants come out exact."""
    if epoch < 0:
        raise ContractViolation(f"epoch must be non-negative, got {epoch}")
    steps = epoch // schedule.step_size
    return float(Decimal(repr(schedule.lr0)) * Decimal(repr(schedule.gamma)) ** steps)


@dataclass
class OptimizerState:
    momentum: float
    lr: float
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


class SGD:
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``."""

    def __init__(self, parameters: Sequence[Parameter], lr: float, momentum: float = 0.9,
                 state: Optional[OptimizerState] = None):
        trainable = [p for p in parameters if p.trainable]
        names = [p.name for p in trainable]
        if None in names or len(set(names)) != len(names):
            raise ContractViolation(f"optimized parameters need unique names, got {names}")
        self.parameters: List[Parameter] = trainable
        self.state = state or OptimizerState(momentum=momentum, lr=lr)
        for param in trainable:
            self.state.velocity.setdefault(param.name, np.zeros_like(param.data))

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        missing = [p.name for p in self.parameters if p.grad is None]
        if missing:
            raise ContractViolation(f"no gradient for trainable parameters: {', '.join(missing)}")
        for param in self.parameters:
            velocity = self.state.momentum * self.state.velocity[param.name] + param.grad
            self.state.velocity[param.name] = velocity.astype(param.data.dtype)
            param.data = (param.data - self.state.lr * velocity).astype(param.data.dtype)
            param.zero_grad()

    def zero_grad(self) -> None:
        for param in self.parameters:
            param.zero_grad()


def sgd_step(parameters: Sequence[Parameter], state: OptimizerState) -> None:
    """One update of ``parameters`` using their populated gradients and ``state``."""
    SGD(parameters, state.lr, state.momentum, state).step()
