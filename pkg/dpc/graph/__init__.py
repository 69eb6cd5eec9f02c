# Differentiable computation engine: tensors, tape, primitives, gradient checks
from dpc.graph import ops
from dpc.graph.gradcheck import GradCheckReport, grad_check
from dpc.graph.tape import GraphTape, backward, corrupted_rule, override_backward
from dpc.graph.tensor import Parameter, Tensor, get_default_dtype, precision

__all__ = [
    "GradCheckReport",
    "GraphTape",
    "Parameter",
    "Tensor",
    "backward",
    "corrupted_rule",
    "get_default_dtype",
    "grad_check",
    "ops",
    "override_backward",
    "precision",
]
