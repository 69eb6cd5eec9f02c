"""Image decoding and the resize / center-crop / normalize pipeline.

Resizing is bilinear without antialiasing and with half-pixel sampling
(``align_corners=False``): output pixel ``i`` samples the source at
``(i + 0.5) * in / out - 0.5``, clamped at 0, between its two neighbours.
The shorter side goes to ``S``, the longer to ``int(S * long / short)``;
the crop then keeps the central ``S×S`` window.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import torch
import torchvision.transforms as transforms
from PIL import Image, UnidentifiedImageError

from dpc.errors import ContractViolation, ImageReadError

logger = logging.getLogger(__name__)

ImageSource = Union[str, Path, Image.Image, np.ndarray]


@dataclass(frozen=True)
class PreprocessConfig:
    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]
    size: int = 224

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ContractViolation("preprocess mean and std need one value per channel")
        if any(s <= 0 for s in self.std):
            raise ContractViolation(f"preprocess std must be positive, got {self.std}")
        if self.size < 1:
            raise ContractViolation(f"preprocess size must be positive, got {self.size}")


def build_transform(config: PreprocessConfig) -> transforms.Compose:
    return transforms.Compose([
        transforms.Resize(config.size, interpolation=transforms.InterpolationMode.BILINEAR, antialias=False),
        transforms.CenterCrop(config.size),
        transforms.Normalize(mean=list(config.mean), std=list(config.std)),
    ])


def decode(image: ImageSource) -> np.ndarray:
    """Pixels as float ``H×W×3`` in [0, 1].

    Grayscale is replicated, a trailing alpha channel dropped.
    """
    if isinstance(image, (str, Path)):
        try:
            with Image.open(image) as handle:
                image = handle.convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            raise ImageReadError(str(image), str(exc)) from None
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))

    pixels = np.asarray(image)
    if pixels.dtype == np.uint8:
        pixels = pixels / 255.0
    pixels = pixels.astype(np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    if pixels.ndim != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ContractViolation(f"image must be H×W or H×W×C with at least one pixel, got {pixels.shape}")
    channels = pixels.shape[2]
    if channels in (1, 2):
        pixels = np.repeat(pixels[:, :, :1], 3, axis=2)
    elif channels == 4:
        pixels = pixels[:, :, :3]
    elif channels != 3:
        raise ContractViolation(f"image must have 1-4 channels, got {channels}")
    return pixels


def preprocess(image: ImageSource, config: PreprocessConfig) -> np.ndarray:
    """``3×S×S`` float32 tensor ready for the image encoder."""
    pixels = decode(image)
    tensor = torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1), dtype=np.float32))
    out = build_transform(config)(tensor).numpy()
    if not np.all(np.isfinite(out)):
        name = image if isinstance(image, (str, Path)) else "<in-memory image>"
        raise ImageReadError(str(name), "non-finite values after preprocessing")
    return out


def preprocess_many(images: Sequence[ImageSource], config: PreprocessConfig, threads: int = 1) -> np.ndarray:
    """Stack of preprocessed images in input order."""
    if not images:
        return np.zeros((0, 3, config.size, config.size), dtype=np.float32)
    if threads <= 1:
        return np.stack([preprocess(image, config) for image in images])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.stack(list(pool.map(lambda image: preprocess(image, config), images)))
