"""Define-by-run computation record and reverse-mode propagation.

A :class:`GraphTape` is opened around a forward pass. Every primitive whose
inputs need a gradient appends one :class:`Node` to the active tape, so the
node list is already a valid forward (topological) order and the backward
pass is a single reverse sweep.
"""
import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from dpc.errors import ContractViolation
from dpc.graph.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

BackwardRule = Callable[["Node", np.ndarray], Sequence[Optional[np.ndarray]]]

_BACKWARD_RULES: Dict[str, BackwardRule] = {}
_active_tape: ContextVar[Optional["GraphTape"]] = ContextVar("dpc_active_tape", default=None)


def backward_rule(kind: str) -> Callable[[BackwardRule], BackwardRule]:
    def register(rule: BackwardRule) -> BackwardRule:
        _BACKWARD_RULES[kind] = rule
        return rule
    return register


def get_backward_rule(kind: str) -> BackwardRule:
    try:
        return _BACKWARD_RULES[kind]
    except KeyError:
        raise ContractViolation(f"no backward rule registered for op kind {kind!r}") from None


@contextmanager
def override_backward(kind: str, rule: BackwardRule) -> Iterator[None]:
    """Temporarily replace the backward rule of one op kind.

    Used by the gradient checker's detector hook; the registry is process
    global, so overrides must not overlap with concurrent training.
    """
    original = get_backward_rule(kind)
    _BACKWARD_RULES[kind] = rule
    logger.warning("backward rule for %r overridden", kind)
    try:
        yield
    finally:
        _BACKWARD_RULES[kind] = original


def corrupted_rule(kind: str, factor: float = 2.0) -> BackwardRule:
    """A deliberately wrong rule: the true input gradients scaled by ``factor``."""
    original = get_backward_rule(kind)

    def rule(node: "Node", grad: np.ndarray):
        return [None if g is None else g * factor for g in original(node, grad)]

    return rule


def active_tape() -> Optional["GraphTape"]:
    return _active_tape.get()


@dataclass(eq=False)
class Node:
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    context: Dict[str, Any]
    tape: "GraphTape"


@dataclass(eq=False)
class GraphTape:
    nodes: List[Node] = field(default_factory=list)

    def __post_init__(self):
        self._tokens = []

    def __enter__(self) -> "GraphTape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc_info) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Tuple[Tensor, ...], output: Tensor, context: Dict[str, Any]) -> Node:
        node = Node(kind, inputs, output, context, self)
        output._node = node
        self.nodes.append(node)
        return node

    def backward(self, loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> Dict[Parameter, np.ndarray]:
        """Propagate d(loss) to every trainable parameter reachable from it.

        Gradients are accumulated into ``Parameter.grad``. Parameters passed
        explicitly that the loss does not reach receive a zero gradient.
        Returns the gradient contributed by this pass, per parameter.
        """
        if loss.data.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node.tape is not self:
            if not loss.requires_grad:
                raise ContractViolation("loss is not connected to any trainable parameter on this tape")
            raise ContractViolation("loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Parameter] = {}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = get_backward_rule(node.kind)(node, upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grad if key not in grads else grads[key] + grad
                if isinstance(tensor, Parameter):
                    leaves[key] = tensor

        result: Dict[Parameter, np.ndarray] = {}
        for key, param in leaves.items():
            if param.trainable:
                grad = np.asarray(grads[key]).reshape(param.shape)
                param.accumulate_grad(grad)
                result[param] = grad
        for param in parameters or ():
            if param.trainable and param not in result:
                zero = np.zeros_like(param.data)
                param.accumulate_grad(zero)
                result[param] = zero
        return result


def backward(loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> Dict[Parameter, np.ndarray]:
    """Run backward on the tape that recorded ``loss``."""
    if loss._node is None:
        if loss.data.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        tape = active_tape()
        if tape is None:
            raise ContractViolation("loss was computed outside of a GraphTape")
        return tape.backward(loss, parameters)
    return loss._node.tape.backward(loss, parameters)
