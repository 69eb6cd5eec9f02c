"""Forward primitives of the graph engine and their backward rules.

Every primitive validates shapes, computes its value with numpy, refuses
non-finite results and, when a tape is active and an input needs a gradient,
records itself so that the registered backward rule can run later.
"""
import math
from typing import Any, Sequence, Tuple, Union

import numpy as np

from dpc.errors import ContractViolation, NumericError
from dpc.graph.tape import Node, active_tape, backward_rule
from dpc.graph.tensor import Tensor

Axis = Union[int, Tuple[int, ...], None]

_GELU_K = math.sqrt(2.0 / math.pi)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _shapes(tensors: Sequence[Tensor]) -> str:
    return ", ".join(str(t.shape) for t in tensors)


def _emit(kind: str, data: np.ndarray, inputs: Tuple[Tensor, ...], **context) -> Tensor:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{kind} produced non-finite values for input shapes {_shapes(inputs)}")
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, context)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractViolation(f"axis {ax} out of range for rank {ndim}")
        normalized.append(ax % ndim)
    return tuple(sorted(normalized))


# elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b))


@backward_rule("add")
def _add_backward(node: Node, grad: np.ndarray):
    a, b = node.inputs
    return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b))


@backward_rule("mul")
def _mul_backward(node: Node, grad: np.ndarray):
    a, b = node.inputs
    return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)


def scale(a, alpha: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * alpha, (a,), alpha=alpha)


@backward_rule("scale")
def _scale_backward(node: Node, grad: np.ndarray):
    return (grad * node.context["alpha"],)


def gelu(x) -> Tensor:
    """Tanh approximation of GELU."""
    x = as_tensor(x)
    inner = _GELU_K * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    return _emit("gelu", 0.5 * x.data * (1.0 + t), (x,), t=t)


@backward_rule("gelu")
def _gelu_backward(node: Node, grad: np.ndarray):
    x = node.inputs[0].data
    t = node.context["t"]
    dinner = _GELU_K * (1.0 + 3 * 0.044715 * x ** 2)
    return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner),)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _emit("relu", np.maximum(x.data, 0), (x,))


@backward_rule("relu")
def _relu_backward(node: Node, grad: np.ndarray):
    return (grad * (node.inputs[0].data > 0),)


# linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractViolation(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None
    return _emit("matmul", np.matmul(a.data, b.data), (a, b))


@backward_rule("matmul")
def _matmul_backward(node: Node, grad: np.ndarray):
    a, b = node.inputs
    grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
    grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
    return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


def l2_norm(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _normalize_axes(axis, x.ndim)
    return _emit("l2_norm", np.sqrt(np.sum(x.data * x.data, axis=axis)), (x,), axis=axis)


@backward_rule("l2_norm")
def _l2_norm_backward(node: Node, grad: np.ndarray):
    x = node.inputs[0].data
    axis = node.context["axis"]
    norm = np.expand_dims(node.output.data, axis)
    safe = np.where(norm > 0, norm, 1.0)
    return (np.expand_dims(grad, axis) * np.where(norm > 0, x / safe, 0.0),)


def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    """S(a, b) = a·b / (‖a‖‖b‖) along ``axis``, broadcasting the other axes.

    A zero-norm input has no defined similarity and raises NumericError.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[axis] != b.shape[axis]:
        raise ContractViolation(f"cosine_similarity: vector dimensions differ, shapes {a.shape} and {b.shape}")
    _broadcast_shape("cosine_similarity", a, b)
    norm_a = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    norm_b = np.sqrt(np.sum(b.data * b.data, axis=axis, keepdims=True))
    for label, norm in (("first", norm_a), ("second", norm_b)):
        if np.any(norm == 0):
            index = tuple(int(i) for i in np.argwhere(norm == 0)[0])
            raise NumericError(f"cosine_similarity: {label} argument has zero norm at index {index}")
    dot = np.sum(a.data * b.data, axis=axis, keepdims=True)
    sim = dot / (norm_a * norm_b)
    return _emit("cosine_similarity", np.squeeze(sim, axis=axis), (a, b),
                 axis=axis, norm_a=norm_a, norm_b=norm_b, sim=sim)


@backward_rule("cosine_similarity")
def _cosine_backward(node: Node, grad: np.ndarray):
    a, b = node.inputs
    ctx = node.context
    norm_a, norm_b, sim = ctx["norm_a"], ctx["norm_b"], ctx["sim"]
    g = np.expand_dims(grad, ctx["axis"])
    grad_a = g * (b.data / (norm_a * norm_b) - sim * a.data / (norm_a * norm_a))
    grad_b = g * (a.data / (norm_a * norm_b) - sim * b.data / (norm_b * norm_b))
    return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


# reductions and normalizations ------------------------------------------

def sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    return _emit("sum", np.sum(x.data, axis=axes, keepdims=keepdims), (x,), axes=axes, keepdims=keepdims)


@backward_rule("sum")
def _sum_backward(node: Node, grad: np.ndarray):
    x = node.inputs[0]
    if not node.context["keepdims"]:
        grad = np.expand_dims(grad, node.context["axes"])
    return (np.broadcast_to(grad, x.shape),)


def mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
    return _emit("mean", np.mean(x.data, axis=axes, keepdims=keepdims), (x,),
                 axes=axes, keepdims=keepdims, count=count)


@backward_rule("mean")
def _mean_backward(node: Node, grad: np.ndarray):
    x = node.inputs[0]
    if not node.context["keepdims"]:
        grad = np.expand_dims(grad, node.context["axes"])
    return (np.broadcast_to(grad / node.context["count"], x.shape),)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1] if x.ndim else 0
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ContractViolation(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last axis of {x.shape}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    return _emit("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), xhat=xhat, inv_std=inv_std)


@backward_rule("layer_norm")
def _layer_norm_backward(node: Node, grad: np.ndarray):
    x, gamma, beta = node.inputs
    xhat, inv_std = node.context["xhat"], node.context["inv_std"]
    dxhat = grad * gamma.data
    grad_x = inv_std * (dxhat - np.mean(dxhat, axis=-1, keepdims=True)
                        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return grad_x, _unbroadcast(grad * xhat, gamma.shape), _unbroadcast(grad, beta.shape)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _normalize_axes(axis, x.ndim)
    shifted = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    return _emit("softmax", shifted / np.sum(shifted, axis=axis, keepdims=True), (x,), axis=axis)


@backward_rule("softmax")
def _softmax_backward(node: Node, grad: np.ndarray):
    y = node.output.data
    axis = node.context["axis"]
    return (y * (grad - np.sum(grad * y, axis=axis, keepdims=True)),)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _normalize_axes(axis, x.ndim)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    return _emit("log_softmax", shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True)),
                 (x,), axis=axis)


@backward_rule("log_softmax")
def _log_softmax_backward(node: Node, grad: np.ndarray):
    axis = node.context["axis"]
    return (grad - np.exp(node.output.data) * np.sum(grad, axis=axis, keepdims=True),)


# structure --------------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractViolation("concat: no inputs")
    ndim = tensors[0].ndim
    axis_n = _normalize_axes(axis, ndim)[0]
    for t in tensors:
        if t.ndim != ndim or t.shape[:axis_n] + t.shape[axis_n + 1:] != \
                tensors[0].shape[:axis_n] + tensors[0].shape[axis_n + 1:]:
            raise ContractViolation(f"concat along axis {axis}: shapes {_shapes(tensors)} disagree")
    sizes = [t.shape[axis_n] for t in tensors]
    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis_n), tensors,
                 axis=axis_n, sizes=sizes)


@backward_rule("concat")
def _concat_backward(node: Node, grad: np.ndarray):
    splits = np.cumsum(node.context["sizes"])[:-1]
    return np.split(grad, splits, axis=node.context["axis"])


def gather(table, ids) -> Tensor:
    """Rows of a ``(V, d)`` table selected by integer ids of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ContractViolation(f"gather: table must be rank 2, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(f"gather: ids outside [0, {table.shape[0]})")
    return _emit("gather", table.data[ids], (table,), ids=ids)


@backward_rule("gather")
def _gather_backward(node: Node, grad: np.ndarray):
    table = node.inputs[0]
    out = np.zeros_like(table.data)
    np.add.at(out, node.context["ids"], grad)
    return (out,)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _emit("reshape", data, (x,))


@backward_rule("reshape")
def _reshape_backward(node: Node, grad: np.ndarray):
    return (grad.reshape(node.inputs[0].shape),)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ContractViolation(f"transpose: {axes} is not a permutation for rank {x.ndim}")
    return _emit("transpose", np.transpose(x.data, axes), (x,), axes=axes)


@backward_rule("transpose")
def _transpose_backward(node: Node, grad: np.ndarray):
    return (np.transpose(grad, np.argsort(node.context["axes"])),)


def select(x, index: int, axis: int = 0) -> Tensor:
    """One position along ``axis``; the axis is dropped."""
    x = as_tensor(x)
    axis = _normalize_axes(axis, x.ndim)[0]
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise ContractViolation(f"select: index {index} out of range for axis {axis} of {x.shape}")
    return _emit("select", np.take(x.data, index, axis=axis), (x,), index=index, axis=axis)


@backward_rule("select")
def _select_backward(node: Node, grad: np.ndarray):
    x = node.inputs[0]
    out = np.zeros_like(x.data)
    slicer = [slice(None)] * x.ndim
    slicer[node.context["axis"]] = node.context["index"]
    out[tuple(slicer)] = grad
    return (out,)


def forward_primitive(kind: str, *inputs, **options) -> Tensor:
    """Dispatch a primitive by name."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractViolation(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **options)


PRIMITIVES = {
    "add": add,
    "mul": mul,
    "scale": scale,
    "gelu": gelu,
    "relu": relu,
    "matmul": matmul,
    "l2_norm": l2_norm,
    "cosine_similarity": cosine_similarity,
    "sum": sum,
    "mean": mean,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "concat": concat,
    "gather": gather,
    "reshape": reshape,
    "transpose": transpose,
    "select": select,
}
