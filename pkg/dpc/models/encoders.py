"""Frozen image and text encoders.

Both are tiny pre-LN transformers whose weights are non-trainable
:class:`~dpc.graph.tensor.Parameter` objects. Features come out in a shared
dimension ``d``, which is also the text encoder's token width so that
virtual prompt tokens can be fed in directly.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from dpc.errors import ContractViolation
from dpc.graph import ops
from dpc.graph.tensor import Parameter, Tensor
from dpc.models import layers, weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageEncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    width: int = 32
    layers: int = 2
    heads: int = 4
    dim: int = 32

    def validate(self) -> None:
        problems = []
        if self.image_size % self.patch_size:
            problems.append(f"image_size {self.image_size} is not a multiple of patch_size {self.patch_size}")
        if self.width % self.heads:
            problems.append(f"width {self.width} is not divisible by heads {self.heads}")
        if problems:
            raise ContractViolation("; ".join(problems))

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    context_length: int = 16
    layers: int = 2
    heads: int = 4
    dim: int = 32

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ContractViolation(f"text dim {self.dim} is not divisible by heads {self.heads}")
        if self.vocab_size < 2:
            raise ContractViolation(f"vocabulary must hold at least the reserved tokens, got {self.vocab_size}")


class Encoder:
    """Named frozen weights plus the archive round trip."""

    def __init__(self, params: Mapping[str, Parameter]):
        expected = self.expected_shapes()
        weights.validate_against({k: p.data for k, p in params.items()}, expected)
        # Archive order follows the configuration, not the caller's mapping.
        self.params: "OrderedDict[str, Parameter]" = OrderedDict((name, params[name]) for name in expected)
        for param in self.params.values():
            param.freeze()

    @classmethod
    def shapes_for(cls, config) -> "OrderedDict[str, Tuple[int, ...]]":
        raise NotImplementedError

    def expected_shapes(self) -> "OrderedDict[str, Tuple[int, ...]]":
        return self.shapes_for(self.config)

    def parameters(self) -> Sequence[Parameter]:
        return list(self.params.values())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data) for name, p in self.params.items())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return weights.snapshot(self.state())

    @classmethod
    def seeded(cls, config, seed: int, stream: int) -> "Encoder":
        rng = np.random.default_rng([seed, stream])
        return cls(config, layers.frozen_parameters(cls.shapes_for(config), rng))


class ImageEncoder(Encoder):
    def __init__(self, config: ImageEncoderConfig, params: Mapping[str, Parameter]):
        config.validate()
        self.config = config
        super().__init__(params)

    @classmethod
    def shapes_for(cls, c) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        shapes["patch_embed.weight"] = (3 * c.patch_size * c.patch_size, c.width)
        shapes["patch_embed.bias"] = (c.width,)
        shapes["positional_embedding"] = (c.grid * c.grid, c.width)
        for i in range(c.layers):
            shapes.update(layers.block_shapes(f"blocks.{i}", c.width))
        shapes["ln_post.gamma"] = (c.width,)
        shapes["ln_post.beta"] = (c.width,)
        shapes["proj"] = (c.width, c.dim)
        return shapes

    @classmethod
    def build(cls, config: ImageEncoderConfig, seed: int) -> "ImageEncoder":
        return cls.seeded(config, seed, stream=0)

    def encode(self, pixels) -> Tensor:
        """``(N, 3, S, S)`` preprocessed pixels to ``(N, d)`` features."""
        c = self.config
        pixels = ops.as_tensor(pixels)
        expected = (3, c.image_size, c.image_size)
        if pixels.ndim != 4 or pixels.shape[1:] != expected:
            raise ContractViolation(f"image encoder expects (N, {', '.join(map(str, expected))}), got {pixels.shape}")
        n, p, g = pixels.shape[0], c.patch_size, c.grid
        patches = ops.reshape(pixels, (n, 3, g, p, g, p))
        patches = ops.reshape(ops.transpose(patches, (0, 2, 4, 1, 3, 5)), (n, g * g, 3 * p * p))
        x = ops.add(layers.linear(patches, self.params, "patch_embed"), self.params["positional_embedding"])
        for i in range(c.layers):
            x = layers.transformer_block(x, self.params, f"blocks.{i}", c.heads)
        pooled = ops.mean(layers.layer_norm(x, self.params, "ln_post"), axis=1)
        return ops.matmul(pooled, self.params["proj"])


class TextEncoder(Encoder):
    def __init__(self, config: TextEncoderConfig, params: Mapping[str, Parameter]):
        config.validate()
        self.config = config
        super().__init__(params)

    @classmethod
    def shapes_for(cls, c) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        shapes["token_embedding"] = (c.vocab_size, c.dim)
        shapes["positional_embedding"] = (c.context_length, c.dim)
        for i in range(c.layers):
            shapes.update(layers.block_shapes(f"blocks.{i}", c.dim))
        shapes["ln_final.gamma"] = (c.dim,)
        shapes["ln_final.beta"] = (c.dim,)
        shapes["text_projection"] = (c.dim, c.dim)
        return shapes

    @classmethod
    def build(cls, config: TextEncoderConfig, seed: int) -> "TextEncoder":
        return cls.seeded(config, seed, stream=1)

    @property
    def token_embedding(self) -> Parameter:
        return self.params["token_embedding"]

    def embed(self, token_ids: Sequence[int]) -> Tensor:
        return ops.gather(self.token_embedding, list(token_ids))

    def encode(self, embeddings) -> Tensor:
        """``(N, T, d)`` embedding sequences to ``(N, d)`` features, pooled at the last token."""
        c = self.config
        embeddings = ops.as_tensor(embeddings)
        if embeddings.ndim != 3 or embeddings.shape[-1] != c.dim:
            raise ContractViolation(f"text encoder expects (N, T, {c.dim}) embeddings, got {embeddings.shape}")
        t = embeddings.shape[1]
        if not 1 <= t <= c.context_length:
            raise ContractViolation(f"sequence length {t} outside [1, {c.context_length}] context length")
        position = Tensor(self.params["positional_embedding"].data[:t])
        x = ops.add(embeddings, position)
        mask = layers.causal_mask(t)
        for i in range(c.layers):
            x = layers.transformer_block(x, self.params, f"blocks.{i}", c.heads, mask)
        last = ops.select(layers.layer_norm(x, self.params, "ln_final"), t - 1, axis=1)
        return ops.matmul(last, self.params["text_projection"])


def encode_image(encoder: ImageEncoder, pixels) -> Tensor:
    """One ``3×H×W`` image to its ``d`` feature."""
    pixels = ops.as_tensor(pixels)
    if pixels.ndim != 3:
        raise ContractViolation(f"encode_image expects a 3×H×W tensor, got {pixels.shape}")
    return ops.select(encoder.encode(ops.reshape(pixels, (1,) + pixels.shape)), 0, axis=0)


def encode_text(encoder: TextEncoder, embeddings) -> Tensor:
    """One ``T×d`` embedding sequence to its ``d`` feature."""
    embeddings = ops.as_tensor(embeddings)
    if embeddings.ndim != 2:
        raise ContractViolation(f"encode_text expects a T×d sequence, got {embeddings.shape}")
    return ops.select(encoder.encode(ops.reshape(embeddings, (1,) + embeddings.shape)), 0, axis=0)


def encode_tokens(encoder: TextEncoder, token_ids: Sequence[int]) -> Tensor:
    return encode_text(encoder, encoder.embed(token_ids))


def save_weights(encoder: Encoder, path=None) -> bytes:
    data = weights.dumps(encoder.state())
    if path is not None:
        weights.save_archive(path, encoder.state())
    return data


def load_weights(encoder_cls, config, source) -> Encoder:
    """Build an encoder from archive bytes or a path; names and shapes must match ``config``."""
    tensors = weights.loads(source) if isinstance(source, (bytes, bytearray)) else weights.load_archive(source)
    return encoder_cls(config, {name: Parameter(values, trainable=False, name=name)
                                for name, values in tensors.items()})


def assert_frozen(encoder: Encoder, snapshot: Mapping[str, np.ndarray]) -> Tuple[bool, Optional[str]]:
    """Bit-exact comparison against a snapshot; returns the first differing name on failure."""
    for name, param in encoder.params.items():
        before = snapshot.get(name)
        if before is None or before.shape != param.data.shape or before.dtype != param.data.dtype \
                or before.tobytes() != param.data.tobytes():
            logger.error("encoder weight %s changed", name)
            return False, name
    return True, None
