import logging
import math
from typing import Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from dpc.data.manifest import DatasetManifest
from dpc.errors import ContractViolation, ManifestError

logger = logging.getLogger(__name__)


def split(manifest: DatasetManifest, fractions: Sequence[float] = (0.8, 0.2),
          seed: int = 0) -> Tuple[DatasetManifest, DatasetManifest]:
    """Stratified train/test partition; each part keeps manifest order."""
    if len(fractions) != 2 or any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ContractViolation(f"split fractions must be two positive values summing to 1, got {list(fractions)}")
    counts = manifest.class_counts()
    short = [f"{label} ({count} records)" for label, count in zip(manifest.labels, counts) if count < len(fractions)]
    if short:
        raise ManifestError([f"class {entry} cannot be split {len(fractions)} ways" for entry in short])

    indices = np.arange(len(manifest))
    try:
        train_idx, test_idx = train_test_split(
            indices, test_size=fractions[1], stratify=manifest.targets, random_state=seed)
    except ValueError as exc:
        raise ManifestError([f"stratified split failed: {exc}"]) from None
    train = manifest.subset(np.sort(train_idx), split="train")
    test = manifest.subset(np.sort(test_idx), split="test")
    logger.info("split %d records into %d train / %d test (seed %d)", len(manifest), len(train), len(test), seed)
    return train, test


def train_test_parts(manifest: DatasetManifest, fractions: Sequence[float], seed: int):
    """Use the manifest's own split tags when every record has one."""
    if manifest.has_splits:
        return manifest.split_part("train"), manifest.split_part("test")
    return split(manifest, fractions, seed)
