import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from dpc.errors import ArchiveError
from dpc.graph.tensor import Parameter, get_default_dtype
from dpc.models import weights
from dpc.models.encoders import (
    ImageEncoder,
    ImageEncoderConfig,
    TextEncoder,
    TextEncoderConfig,
    assert_frozen,
)

logger = logging.getLogger(__name__)

IMAGE_PREFIX = "image."
TEXT_PREFIX = "text."

# Global encoder cache
_encoder_cache: Dict[Tuple, "EncoderPair"] = {}


@dataclass
class EncoderPair:
    """The two frozen encoders of a run, archived together."""

    image: ImageEncoder
    text: TextEncoder
    source: str = "seeded"
    _digest: Optional[str] = field(default=None, repr=False)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        state.update((IMAGE_PREFIX + k, v) for k, v in self.image.state().items())
        state.update((TEXT_PREFIX + k, v) for k, v in self.text.state().items())
        return state

    @property
    def digest(self) -> str:
        if self._digest is None:
            self._digest = weights.digest(self.state())
        return self._digest

    @property
    def dim(self) -> int:
        return self.text.config.dim

    def snapshot(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {"image": self.image.snapshot(), "text": self.text.snapshot()}

    def assert_frozen(self, snapshot: Dict[str, Dict[str, np.ndarray]]) -> Tuple[bool, Optional[str]]:
        for side, encoder in (("image", self.image), ("text", self.text)):
            ok, name = assert_frozen(encoder, snapshot[side])
            if not ok:
                return False, f"{side}.{name}"
        return True, None


def _split_archive(tensors) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    image, text, stray = {}, {}, []
    for name, values in tensors.items():
        if name.startswith(IMAGE_PREFIX):
            image[name[len(IMAGE_PREFIX):]] = values
        elif name.startswith(TEXT_PREFIX):
            text[name[len(TEXT_PREFIX):]] = values
        else:
            stray.append(name)
    if stray:
        raise ArchiveError("archive tensors outside the image./text. namespaces", stray)
    return image, text


def load_encoders(
    image_config: ImageEncoderConfig,
    text_config: TextEncoderConfig,
    seed: int,
    archive_path: Optional[str] = None,
) -> EncoderPair:
    """Load the frozen encoders for a run.

    Args:
        image_config: Image encoder configuration.
        text_config: Text encoder configuration (vocabulary size included).
        seed: Weight seed for the reference encoders.
        archive_path: Weight archive to load instead of seeding. If None,
            seeded reference encoders are built.

    Returns:
        The encoder pair, shared through a process-wide cache.
    """
    data = None
    if archive_path is not None:
        try:
            data = Path(archive_path).read_bytes()
        except OSError:
            raise ArchiveError(f"encoder archive {archive_path} not found (paths.encoder_archive)") from None
    # Archives are keyed by content so a rewritten file is reloaded.
    source = None if data is None else hashlib.sha256(data).hexdigest()
    key = (image_config, text_config, seed, source, get_default_dtype().name)

    # Check if the encoders are already loaded in cache
    if key in _encoder_cache:
        return _encoder_cache[key]

    if data is None:
        logger.info("building seeded reference encoders (seed %d)", seed)
        pair = EncoderPair(ImageEncoder.build(image_config, seed), TextEncoder.build(text_config, seed))
    else:
        logger.info("loading encoder archive %s", archive_path)
        image, text = _split_archive(weights.loads(data))
        try:
            image_encoder = ImageEncoder(image_config, _as_parameters(image))
        except ArchiveError as exc:
            raise ArchiveError(f"image encoder: {exc}") from None
        try:
            text_encoder = TextEncoder(text_config, _as_parameters(text))
        except ArchiveError as exc:
            raise ArchiveError(f"text encoder: {exc}") from None
        pair = EncoderPair(image_encoder, text_encoder, source=str(archive_path))

    # Store in cache
    _encoder_cache[key] = pair
    return pair


def _as_parameters(tensors: Dict[str, np.ndarray]) -> Dict[str, Parameter]:
    return {name: Parameter(values, trainable=False, name=name) for name, values in tensors.items()}


def export_encoders(pair: EncoderPair, path) -> Path:
    """Write both encoders into one weight archive."""
    return weights.save_archive(path, pair.state())


def clear_cache() -> None:
    _encoder_cache.clear()
