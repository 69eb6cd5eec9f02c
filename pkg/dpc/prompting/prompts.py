"""Class-specific prompt banks and diversified prompt composition.

A prompt bank holds one ``L×d`` sequence of virtual tokens per slice. The
diversified prompt of an image weights every token of every slice by its
cosine similarity to the image feature and sums over slices, position by
position::

    p_d(j) = sum_i S(f_img, p_i(j)) * p_i(j)

Class words are appended to the prompt before text encoding.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from dpc.errors import ContractViolation, NumericError
from dpc.graph import ops
from dpc.graph.tensor import Parameter, Tensor
from dpc.models.encoders import TextEncoder
from dpc.prompting.vocab import Template, Vocabulary, tokenize

logger = logging.getLogger(__name__)

INIT_NOISE_STD = 0.02


@dataclass(frozen=True)
class AblationFlags:
    instance_specific: bool = True
    class_specific: bool = True

    @property
    def label(self) -> str:
        parts = [name for name, on in (("IS", self.instance_specific), ("CS", self.class_specific)) if on]
        return "+".join(parts) or "-"

    def bank_slices(self, classes: int) -> int:
        return classes if self.class_specific else 1


ABLATION_GRID = (
    AblationFlags(False, False),
    AblationFlags(True, False),
    AblationFlags(False, True),
    AblationFlags(True, True),
)


class PromptBank:
    """Trainable ``(slices, L, d)`` virtual tokens."""

    def __init__(self, values):
        values = values if isinstance(values, Parameter) else Parameter(values, name="prompt_bank")
        if values.ndim != 3:
            raise ContractViolation(f"prompt bank must be (slices, L, d), got {values.shape}")
        values.name = "prompt_bank"
        self.values = values

    @property
    def slices(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def slice(self, index: int) -> Tensor:
        """One slice as a ``(1, L, d)`` tensor."""
        return ops.reshape(ops.select(self.values, index, axis=0), (1, self.length, self.dim))


class ClassEmbeddings:
    """Frozen embedding rows of each class word, in label order."""

    def __init__(self, labels: Sequence[str], token_ids: Sequence[Sequence[int]], rows: Sequence[np.ndarray]):
        self.labels = list(labels)
        self.token_ids = [list(ids) for ids in token_ids]
        self.rows = [np.asarray(r) for r in rows]

    @classmethod
    def build(cls, labels: Sequence[str], vocabulary: Vocabulary, text_encoder: TextEncoder) -> "ClassEmbeddings":
        token_ids = []
        for label in labels:
            ids = tokenize(label, vocabulary)
            if not ids:
                raise ContractViolation(f"class word {label!r} has no tokens")
            if vocabulary.unk_id in ids:
                logger.warning("class word %r contains out-of-vocabulary words", label)
            token_ids.append(ids)
        table = text_encoder.token_embedding.data
        return cls(labels, token_ids, [np.array(table[ids]) for ids in token_ids])

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def longest(self) -> int:
        return max(len(ids) for ids in self.token_ids)


def init_prompt_bank(
    template: Template,
    text_encoder: TextEncoder,
    classes: int,
    is_flag: bool,
    seed: int = 0,
    longest_class: int = 1,
) -> PromptBank:
    """Copy the template's embedded tokens into every slice.

    With ``is_flag`` each slice is additionally perturbed by seeded Gaussian
    noise so the slices start apart.
    """
    if classes < 1:
        raise ContractViolation(f"prompt bank needs at least one slice, got {classes}")
    budget = text_encoder.config.context_length
    if len(template) + longest_class > budget:
        raise ContractViolation(
            f"template of {len(template)} tokens plus class word of {longest_class} exceeds context length {budget}")
    base = text_encoder.token_embedding.data[list(template.token_ids)]
    values = np.repeat(base[np.newaxis], classes, axis=0).astype(np.float64)
    if is_flag:
        values = values + np.random.default_rng([seed, 2]).normal(0.0, INIT_NOISE_STD, size=values.shape)
    return PromptBank(Parameter(values, name="prompt_bank"))


def _check_token_norms(bank: Tensor) -> None:
    norms = np.sqrt(np.sum(bank.data * bank.data, axis=-1))
    if np.any(norms == 0):
        cls, pos = (int(i) for i in np.argwhere(norms == 0)[0])
        raise NumericError(f"prompt token at class {cls}, position {pos} has zero norm")


def compose_diversified(image_features, bank, normalize: bool = False) -> Tensor:
    """Diversified prompt of each image.

    ``image_features`` is ``(d,)`` or ``(N, d)``; the result is ``(L, d)`` or
    ``(N, L, d)`` accordingly. Weights are raw cosines unless ``normalize``
    applies a softmax over slices.
    """
    values = bank.values if isinstance(bank, PromptBank) else ops.as_tensor(bank)
    features = ops.as_tensor(image_features)
    single = features.ndim == 1
    if single:
        features = ops.reshape(features, (1,) + features.shape)
    slices, length, dim = values.shape
    if features.ndim != 2 or features.shape[1] != dim:
        raise ContractViolation(f"image features {features.shape} do not match prompt dimension {dim}")
    _check_token_norms(values)
    n = features.shape[0]
    weights = ops.cosine_similarity(ops.reshape(features, (n, 1, 1, dim)),
                                    ops.reshape(values, (1, slices, length, dim)))
    if normalize:
        weights = ops.softmax(weights, axis=1)
    weighted = ops.mul(ops.reshape(weights, (n, slices, length, 1)), ops.reshape(values, (1, slices, length, dim)))
    composed = ops.sum(weighted, axis=1)
    return ops.select(composed, 0, axis=0) if single else composed


def assemble_full_prompt(prompt, class_rows, context_length: Optional[int] = None) -> Tensor:
    """Prompt tokens followed by the class word rows, along the token axis."""
    prompt = ops.as_tensor(prompt)
    rows = np.asarray(class_rows.data if isinstance(class_rows, Tensor) else class_rows)
    if rows.ndim != 2 or rows.shape[1] != prompt.shape[-1]:
        raise ContractViolation(f"class rows {rows.shape} do not match prompt width {prompt.shape[-1]}")
    total = prompt.shape[-2] + rows.shape[0]
    if context_length is not None and total > context_length:
        raise ContractViolation(f"prompt of {total} tokens exceeds context length {context_length}")
    if prompt.ndim == 3:
        rows = np.broadcast_to(rows, (prompt.shape[0],) + rows.shape)
    return ops.concat([prompt, Tensor(rows)], axis=-2)


def ablation_prompt(
    flags: AblationFlags,
    bank: PromptBank,
    image_features,
    class_embeddings: ClassEmbeddings,
    context_length: Optional[int] = None,
    normalize: bool = False,
) -> List[Tensor]:
    """Per-class embedding sequences for one flag combination.

    Sequences that do not depend on the image have a leading extent of 1 and
    broadcast against the image batch when scored.
    """
    classes = len(class_embeddings)
    expected = flags.bank_slices(classes)
    if bank.slices != expected:
        raise ContractViolation(f"flags {flags.label} need a bank of {expected} slices, got {bank.slices}")
    features = ops.as_tensor(image_features)
    if features.ndim == 1:
        features = ops.reshape(features, (1,) + features.shape)

    if flags.instance_specific:
        shared = compose_diversified(features, bank, normalize=normalize)
        prompts = [shared] * classes
    elif flags.class_specific:
        prompts = [bank.slice(i) for i in range(classes)]
    else:
        prompts = [bank.slice(0)] * classes
    return [assemble_full_prompt(prompt, rows, context_length)
            for prompt, rows in zip(prompts, class_embeddings.rows)]
