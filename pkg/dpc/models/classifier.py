"""Similarity scoring, prediction and the training loss."""
from typing import Sequence, Union

import numpy as np

from dpc.errors import ContractViolation
from dpc.graph import ops
from dpc.graph.tensor import Tensor
from dpc.models.encoders import TextEncoder


def score(image_features, sequences: Sequence, text_encoder: TextEncoder) -> Tensor:
    """``(N, C)`` cosine logits between image features and each class's text feature.

    Every class sequence is encoded once for the whole batch; a sequence
    with leading extent 1 is shared by all images.
    """
    if len(sequences) < 2:
        raise ContractViolation(f"scoring needs at least 2 class sequences, got {len(sequences)}")
    features = ops.as_tensor(image_features)
    single = features.ndim == 1
    if single:
        features = ops.reshape(features, (1,) + features.shape)
    text_features = []
    for sequence in sequences:
        sequence = ops.as_tensor(sequence)
        if sequence.ndim == 2:
            sequence = ops.reshape(sequence, (1,) + sequence.shape)
        text_features.append(text_encoder.encode(sequence))
    logits = similarity_logits(features, text_features)
    return ops.select(logits, 0, axis=0) if single else logits


def similarity_logits(image_features, text_features: Sequence) -> Tensor:
    """Cosine of ``(N, d)`` image features against each class's ``(N or 1, d)`` text feature."""
    features = ops.as_tensor(image_features)
    n = features.shape[0]
    columns = [ops.reshape(ops.cosine_similarity(features, ops.as_tensor(t)), (n, 1)) for t in text_features]
    return ops.concat(columns, axis=1)


def predict(logits) -> Union[int, np.ndarray]:
    """Argmax over classes; ties go to the lowest index."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if values.ndim == 1:
        return int(np.argmax(values))
    return np.argmax(values, axis=-1)


def one_hot(targets: np.ndarray, classes: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise ContractViolation(f"targets outside [0, {classes}): {sorted(set(targets.tolist()))}")
    return np.eye(classes)[targets]


def instance_losses(logits, targets, logit_scale: float = 1.0) -> Tensor:
    """``-log softmax(logit_scale * logits)[target]`` per row of ``(N, C)`` logits."""
    if logit_scale <= 0:
        raise ContractViolation(f"logit_scale must be positive, got {logit_scale}")
    logits = ops.as_tensor(logits)
    if logits.ndim != 2:
        raise ContractViolation(f"expected (N, C) logits, got {logits.shape}")
    log_probs = ops.log_softmax(ops.scale(logits, logit_scale), axis=1)
    picked = ops.sum(ops.mul(log_probs, one_hot(targets, logits.shape[1])), axis=1)
    return ops.scale(picked, -1.0)


def cross_entropy(logits, targets, logit_scale: float = 1.0) -> Tensor:
    """Mean categorical cross-entropy over the batch; a single row takes an int target."""
    logits = ops.as_tensor(logits)
    if logits.ndim == 1:
        logits = ops.reshape(logits, (1,) + logits.shape)
        targets = [targets]
    return ops.mean(instance_losses(logits, np.atleast_1d(targets), logit_scale))
