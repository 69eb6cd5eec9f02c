"""Separable synthetic image classes for desk-scale runs.

Class ``k`` images share a base colour, offset from mid grey along a
direction well apart from every other class, and a sinusoidal stripe
pattern whose frequency and orientation depend on ``k``; each instance adds
Gaussian pixel noise. After generation the frozen image encoder's features
are fitted with a linear classifier; the achieved training accuracy is the
dataset's separability certificate.

Label names mean nothing to the frozen encoders, so which name a visual
class carries is free. :func:`neutral_order` picks the assignment that
leaves the untrained prompt at chance.
"""
import itertools
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dpc.data.features import extract_features, separability_score
from dpc.data.manifest import SYNTHETIC_PREFIX, DatasetManifest, Record
from dpc.data.preprocess import PreprocessConfig, preprocess_many
from dpc.errors import ContractViolation, SyntheticDataError
from dpc.models.encoders import ImageEncoder

logger = logging.getLogger(__name__)

MIKELS_CATEGORIES = (
    "amusement", "anger", "awe", "contentment", "disgust", "excitement", "fear", "sadness",
)

CERTIFICATE_THRESHOLD = 0.99
SEED_RETRIES = 3
COLOUR_RADIUS = 0.3
# 8! orders; beyond this the identity order is kept.
NEUTRAL_MAX_CLASSES = 8


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 3
    per_class: int = 60
    image_size: int = 32
    seed: int = 0
    noise: float = 0.05
    amplitude: float = 0.1
    colour_radius: float = COLOUR_RADIUS
    labels: Optional[Sequence[str]] = None

    def label_names(self) -> List[str]:
        if self.labels is not None:
            if len(self.labels) != self.classes:
                raise ContractViolation(f"{len(self.labels)} synthetic labels for {self.classes} classes")
            return list(self.labels)
        if self.classes <= len(MIKELS_CATEGORIES):
            return list(MIKELS_CATEGORIES[:self.classes])
        return [f"class{i}" for i in range(self.classes)]


def colour_directions(classes: int, rng: np.random.Generator) -> np.ndarray:
    """Unit RGB offsets: signed axes first, then cube corners, then seeded random directions."""
    axes = np.vstack([np.eye(3), -np.eye(3)])
    corners = np.array(list(itertools.product((1.0, -1.0), repeat=3))) / np.sqrt(3.0)
    directions = np.vstack([axes, corners])
    if classes > len(directions):
        extra = rng.normal(size=(classes - len(directions), 3))
        directions = np.vstack([directions, extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    return directions[:classes]


def generate_images(spec: SyntheticSpec) -> List[np.ndarray]:
    """``classes * per_class`` float32 ``H×W×3`` images, class-major order."""
    if spec.classes < 2 or spec.per_class < 1 or spec.image_size < 1:
        raise ContractViolation(f"invalid synthetic spec {spec}")
    if not 0.0 < spec.colour_radius <= 0.5:
        raise ContractViolation(f"colour radius {spec.colour_radius} outside (0, 0.5]")
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    colours = 0.5 + spec.colour_radius * colour_directions(spec.classes, rng)
    phases = rng.uniform(0.0, 2 * np.pi, size=spec.classes)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")

    images = []
    for k in range(spec.classes):
        angle = np.pi * k / spec.classes
        wave = np.sin(2 * np.pi * (k + 1) * (xx * np.cos(angle) + yy * np.sin(angle)) / size + phases[k])
        mean_image = colours[k][np.newaxis, np.newaxis, :] + spec.amplitude * wave[:, :, np.newaxis]
        for _ in range(spec.per_class):
            noisy = mean_image + rng.normal(0.0, spec.noise, size=mean_image.shape)
            images.append(np.clip(noisy, 0.0, 1.0).astype(np.float32))
    return images


def make_synthetic(
    spec: SyntheticSpec,
    encoder: ImageEncoder,
    config: PreprocessConfig,
    threshold: float = CERTIFICATE_THRESHOLD,
    retries: int = SEED_RETRIES,
    threads: int = 1,
) -> DatasetManifest:
    """Generate, certify and return an in-memory dataset.

    A dataset whose separability score falls below ``threshold`` is regenerated
    with ``seed + 1``, at most ``retries`` times.
    """
    labels = spec.label_names()
    attempt = spec
    for _ in range(retries + 1):
        images = generate_images(attempt)
        records = [Record(f"{SYNTHETIC_PREFIX}{i:05d}", labels[i // attempt.per_class]) for i in range(len(images))]
        manifest = DatasetManifest(records, labels, {r.path: image for r, image in zip(records, images)})
        features = extract_features(encoder, preprocess_many(images, config, threads))
        certificate = separability_score(features, manifest.targets)
        if certificate >= threshold:
            manifest.certificate = certificate
            logger.info("synthetic dataset seed %d certified at %.4f", attempt.seed, certificate)
            return manifest
        logger.warning("synthetic seed %d separability %.4f below %.2f, bumping seed",
                       attempt.seed, certificate, threshold)
        attempt = replace(attempt, seed=attempt.seed + 1)
    raise SyntheticDataError(
        f"no certified synthetic dataset for seeds {spec.seed}..{attempt.seed - 1} "
        f"(separability threshold {threshold})")


def neutral_order(counts) -> Tuple[int, ...]:
    """Label order whose accuracy under ``counts`` is closest to chance.

    ``counts[k, c]`` is how many images of visual class ``k`` a model calls
    class ``c``; visual class ``k`` is then named ``labels[order[k]]``. Ties
    go to the first order in lexicographic order, identity first.
    """
    counts = np.asarray(counts, dtype=np.int64)
    classes = counts.shape[0]
    if counts.shape != (classes, classes):
        raise ContractViolation(f"prediction counts must be square, got {counts.shape}")
    identity = tuple(range(classes))
    if classes > NEUTRAL_MAX_CLASSES:
        logger.warning("%d classes: keeping the generated label order", classes)
        return identity
    total = int(counts.sum())
    rows = np.arange(classes)
    best, best_gap = identity, None
    for order in itertools.permutations(rows):
        # |hits / total - 1 / classes| scaled to integers
        gap = abs(int(counts[rows, list(order)].sum()) * classes - total)
        if best_gap is None or gap < best_gap:
            best, best_gap = tuple(int(c) for c in order), gap
    return best


def relabel(manifest: DatasetManifest, order: Sequence[int]) -> DatasetManifest:
    """Records labeled ``labels[k]`` become ``labels[order[k]]``; label order is unchanged."""
    labels = manifest.labels
    if sorted(order) != list(range(len(labels))):
        raise ContractViolation(f"{list(order)} is not an order of {len(labels)} labels")
    names = {labels[k]: labels[c] for k, c in enumerate(order)}
    records = [replace(r, label=names[r.label]) for r in manifest.records]
    return DatasetManifest(records, list(labels), dict(manifest.images), manifest.certificate, manifest.root)
