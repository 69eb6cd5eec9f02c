"""Frozen image features, computed once per dataset and cached."""
import logging
from typing import Dict, Tuple

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from dpc.data.manifest import DatasetManifest
from dpc.data.preprocess import PreprocessConfig, preprocess_many
from dpc.models.encoders import ImageEncoder

logger = logging.getLogger(__name__)

BATCH = 64


def extract_features(encoder: ImageEncoder, pixels: np.ndarray, batch: int = BATCH) -> np.ndarray:
    """``(N, d)`` features; no tape is open so nothing is recorded."""
    chunks = [encoder.encode(pixels[start:start + batch]).data for start in range(0, len(pixels), batch)]
    if not chunks:
        return np.zeros((0, encoder.config.dim), dtype=encoder.params["proj"].dtype)
    return np.concatenate(chunks, axis=0)


def separability_score(features: np.ndarray, targets: np.ndarray) -> float:
    """Training accuracy of a standardized logistic regression on ``features``."""
    classifier = make_pipeline(StandardScaler(), LogisticRegression(C=100.0, max_iter=2000))
    classifier.fit(features, targets)
    return float(classifier.score(features, targets))


class FeatureStore:
    """Features keyed by manifest fingerprint, encoder digest and preprocessing.

    Images are decoded, preprocessed and encoded ``batch`` at a time, so at
    most one batch of pixels is held in memory.
    """

    def __init__(self, encoder: ImageEncoder, encoder_digest: str, config: PreprocessConfig, threads: int = 1,
                 batch: int = BATCH):
        self.encoder = encoder
        self.encoder_digest = encoder_digest
        self.config = config
        self.threads = threads
        self.batch = batch
        self._cache: Dict[Tuple[str, str, PreprocessConfig], np.ndarray] = {}

    def __call__(self, manifest: DatasetManifest) -> np.ndarray:
        key = (manifest.fingerprint(), self.encoder_digest, self.config)
        if key not in self._cache:
            self._cache[key] = self._encode(manifest)
            logger.info("encoded %d images", len(manifest))
        return self._cache[key]

    def _encode(self, manifest: DatasetManifest) -> np.ndarray:
        chunks = []
        for start in range(0, len(manifest), self.batch):
            sources = [manifest.resolve(r) for r in manifest.records[start:start + self.batch]]
            pixels = preprocess_many(sources, self.config, self.threads)
            chunks.append(extract_features(self.encoder, pixels, self.batch))
        if not chunks:
            return extract_features(self.encoder, preprocess_many([], self.config))
        return np.concatenate(chunks, axis=0)
