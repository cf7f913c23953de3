"""
Anomaly-source images.
Supplies the natural (or procedural) images whose features are pasted
into normal features.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO

import numpy as np
import torch
from PIL import Image
from torch import Tensor

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(path: str | Path | BinaryIO, size: int | None = None) -> Tensor:
    """
    Read an RGB image as a (3, H, W) float tensor in [0, 1].

    Args:
        path: Image file, or a binary file object holding one.
        size: Optional square side to resize to (bilinear).
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if size is not None:
            rgb = rgb.resize((size, size), Image.Resampling.BILINEAR)
        array = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy(array.copy()).permute(2, 0, 1).contiguous()


def procedural_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """
    A random colourful texture: mixed oriented sinusoids plus blotches.

    Returns:
        (size, size, 3) float32 array in [0, 1].
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    texture = np.zeros((size, size, 3), dtype=np.float32)
    for channel in range(3):
        for _ in range(3):
            freq = rng.uniform(2.0, 12.0)
            angle = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            texture[..., channel] += np.sin(
                2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase
            )
    texture += rng.normal(0.0, 0.3, size=texture.shape).astype(np.float32)
    low, high = texture.min(), texture.max()
    return ((texture - low) / max(high - low, 1e-6)).astype(np.float32)


class AnomalySourceBank:
    """
    Bank of anomaly-source images at the training resolution.

    With a directory, image paths are indexed once (recursively,
    lexicographic order) and each image is decoded only when draw picks
    it, through a bounded LRU cache. Without one, a fixed set of
    procedural textures is generated up front.
    """

    def __init__(
        self,
        image_size: int,
        source_dir: str | Path | None = None,
        n_procedural: int = 64,
        seed: int = 0,
        cache_size: int = 256,
    ):
        self.image_size = image_size
        self.source_dir = Path(source_dir) if source_dir else None
        self.paths: list[Path] = []
        self._textures: Tensor | None = None

        if self.source_dir is not None:
            if not self.source_dir.exists():
                raise FileNotFoundError(f"Anomaly source directory not found: {self.source_dir}")
            self.paths = sorted(p for p in self.source_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
            if not self.paths:
                raise ValueError(f"No images found in anomaly source directory: {self.source_dir}")
            self._load = lru_cache(maxsize=cache_size)(self._read)
            logger.info(f"Indexed {len(self.paths)} anomaly source images under {self.source_dir}")
        else:
            rng = np.random.default_rng(seed)
            textures = [procedural_texture(image_size, rng) for _ in range(n_procedural)]
            self._textures = torch.from_numpy(np.stack(textures)).permute(0, 3, 1, 2).contiguous()
            logger.info(f"Generated {n_procedural} procedural anomaly source textures")

    def _read(self, index: int) -> Tensor:
        return load_image(self.paths[index], self.image_size)

    def __len__(self) -> int:
        if self._textures is not None:
            return self._textures.shape[0]
        return len(self.paths)

    def __getitem__(self, index: int) -> Tensor:
        if self._textures is not None:
            return self._textures[index]
        return self._load(index)

    def draw(self, count: int, rng: np.random.Generator) -> Tensor:
        """Pick count source images (with replacement)."""
        indices = rng.integers(0, len(self), size=count)
        return torch.stack([self[int(i)] for i in indices])
