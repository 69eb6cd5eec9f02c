"""Pre-LN transformer building blocks over graph primitives.

Weights live in flat ``name -> Parameter`` mappings; every function here
takes the mapping plus a name prefix so encoders stay plain containers.
"""
import math
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from dpc.graph import ops
from dpc.graph.tensor import Parameter, Tensor

INIT_STD = 0.02
# Finite stand-in for -inf; the engine rejects non-finite intermediates.
MASK_VALUE = -1e9


def block_shapes(prefix: str, width: int) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    hidden = 4 * width
    yield f"{prefix}.ln_1.gamma", (width,)
    yield f"{prefix}.ln_1.beta", (width,)
    for proj in ("q", "k", "v", "out"):
        yield f"{prefix}.attn.{proj}.weight", (width, width)
        yield f"{prefix}.attn.{proj}.bias", (width,)
    yield f"{prefix}.ln_2.gamma", (width,)
    yield f"{prefix}.ln_2.beta", (width,)
    yield f"{prefix}.mlp.fc.weight", (width, hidden)
    yield f"{prefix}.mlp.fc.bias", (hidden,)
    yield f"{prefix}.mlp.proj.weight", (hidden, width)
    yield f"{prefix}.mlp.proj.bias", (width,)


def initial_value(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """LayerNorm scales start at one, shifts and biases at zero, the rest Gaussian."""
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith(".beta") or name.endswith(".bias"):
        return np.zeros(shape)
    return rng.normal(0.0, INIT_STD, size=shape)


def frozen_parameters(shapes: Mapping[str, Tuple[int, ...]], rng: np.random.Generator) -> Dict[str, Parameter]:
    return {name: Parameter(initial_value(name, shape, rng), trainable=False, name=name)
            for name, shape in shapes.items()}


def linear(x, params: Mapping[str, Parameter], prefix: str) -> Tensor:
    return ops.add(ops.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def layer_norm(x, params: Mapping[str, Parameter], prefix: str) -> Tensor:
    return ops.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def causal_mask(length: int) -> Tensor:
    return Tensor(np.triu(np.full((length, length), MASK_VALUE), k=1))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, width = x.shape
    return ops.transpose(ops.reshape(x, (n, t, heads, width // heads)), (0, 2, 1, 3))


def attention(x, params: Mapping[str, Parameter], prefix: str, heads: int,
              mask: Optional[Tensor] = None) -> Tensor:
    """Multi-head self-attention over ``(N, T, width)``."""
    n, t, width = x.shape
    q = _split_heads(linear(x, params, f"{prefix}.q"), heads)
    k = _split_heads(linear(x, params, f"{prefix}.k"), heads)
    v = _split_heads(linear(x, params, f"{prefix}.v"), heads)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(width // heads))
    if mask is not None:
        scores = ops.add(scores, mask)
    context = ops.matmul(ops.softmax(scores, axis=-1), v)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (n, t, width))
    return linear(merged, params, f"{prefix}.out")


def mlp(x, params: Mapping[str, Parameter], prefix: str) -> Tensor:
    return linear(ops.gelu(linear(x, params, f"{prefix}.fc")), params, f"{prefix}.proj")


def transformer_block(x, params: Mapping[str, Parameter], prefix: str, heads: int,
                      mask: Optional[Tensor] = None) -> Tensor:
    x = ops.add(x, attention(layer_norm(x, params, f"{prefix}.ln_1"), params, f"{prefix}.attn", heads, mask))
    return ops.add(x, mlp(layer_norm(x, params, f"{prefix}.ln_2"), params, f"{prefix}.mlp"))
