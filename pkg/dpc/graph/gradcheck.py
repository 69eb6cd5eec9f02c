"""Central finite-difference verification of backward rules."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dpc.errors import ContractViolation, NonDeterministicError
from dpc.graph.tape import GraphTape
from dpc.graph.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass
class ParameterCheck:
    name: str
    indices: List[Tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    checks: List[ParameterCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def coordinates(self) -> int:
        return sum(len(c.indices) for c in self.checks)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _scalar(value: Tensor) -> float:
    if value.data.size != 1:
        raise ContractViolation(f"checked function must return a scalar, got shape {value.shape}")
    return float(value.data.reshape(()))


def grad_check(
    function: Callable[[], Tensor],
    parameters: Sequence[Parameter],
    step: float = 1e-4,
    tolerance: float = 1e-4,
    samples: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backward gradients with central differences.

    ``function`` rebuilds the graph on every call and returns a scalar. When
    ``samples`` is set, that many coordinates (over all parameters) are drawn
    without replacement and their indices recorded; otherwise every coordinate
    is checked. Relative errors use ``max(|analytic|, |numeric|, floor)`` as
    the denominator.
    """
    if step <= 0:
        raise ContractViolation(f"finite-difference step must be positive, got {step}")
    if not parameters:
        raise ContractViolation("no parameters to check")

    first, second = _scalar(function()), _scalar(function())
    if first != second:
        raise NonDeterministicError(
            f"checked function is not deterministic: two forward passes gave {first!r} and {second!r}")

    for param in parameters:
        param.zero_grad()
    with GraphTape() as tape:
        loss = function()
    analytic: Dict[Parameter, np.ndarray] = tape.backward(loss, parameters)

    sizes = [p.data.size for p in parameters]
    total = int(np.sum(sizes))
    if samples is None or samples >= total:
        chosen = np.arange(total)
    else:
        chosen = np.sort(np.random.default_rng(seed).choice(total, size=samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    report = GradCheckReport(step=step, tolerance=tolerance)
    for k, param in enumerate(parameters):
        local = chosen[(chosen >= offsets[k]) & (chosen < offsets[k + 1])] - offsets[k]
        if local.size == 0:
            continue
        indices = [tuple(int(i) for i in np.unravel_index(j, param.shape)) for j in local]
        grad = analytic[param]
        numeric = np.empty(len(indices))
        for n, index in enumerate(indices):
            original = param.data[index]
            param.data[index] = original + step
            plus = _scalar(function())
            param.data[index] = original - step
            minus = _scalar(function())
            param.data[index] = original
            numeric[n] = (plus - minus) / (2 * step)
        picked = np.array([grad[index] for index in indices], dtype=np.float64)
        errors = relative_error(picked, numeric, floor)
        worst = float(errors.max())
        report.checks.append(ParameterCheck(
            name=param.name or f"parameter{k}",
            indices=indices,
            analytic=picked,
            numeric=numeric,
            max_rel_error=worst,
            passed=worst <= tolerance,
        ))
        logger.debug("gradcheck %s: %d coordinates, max rel err %.3e", param.name, len(indices), worst)
        param.zero_grad()
    return report
