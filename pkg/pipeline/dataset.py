"""
Dataset indexing, image loading and the generated toy dataset.

Two layouts are understood:

    mvtec: root/<category>/train/good/*
           root/<category>/test/<defect>/*        (defect "good" = normal)
           root/<category>/ground_truth/<defect>/<stem>_mask.png
    flat:  root/train/*
           root/test/normal/*, root/test/anomalous/*
           root/masks/<stem>.png
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from PIL import Image
from torch import Tensor

from pipeline.config import DatasetLayout
from synthesis.sources import IMAGE_SUFFIXES, load_image

logger = logging.getLogger(__name__)

NORMAL_DEFECT = "good"
RECORD_COLUMNS = ["path", "split", "label", "defect", "mask_path"]


class DatasetError(ValueError):
    """Raised for empty splits, missing masks or anomalous training records."""


def _image_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class DatasetIndex:
    """
    All records of one dataset category, in lexicographic path order.

    Attributes:
        root: Dataset root
        layout: Directory layout
        category: Category name
        records: DataFrame with columns path, split, label, defect, mask_path
    """

    root: Path
    layout: DatasetLayout
    category: str
    records: pd.DataFrame

    def split(self, name: str) -> pd.DataFrame:
        return self.records[self.records["split"] == name].reset_index(drop=True)

    @property
    def train(self) -> pd.DataFrame:
        return self.split("train")

    @property
    def test(self) -> pd.DataFrame:
        return self.split("test")

    @property
    def has_masks(self) -> bool:
        anomalous = self.test[self.test["label"] == 1]
        return bool(len(anomalous)) and bool(anomalous["mask_path"].notna().all())

    def __len__(self) -> int:
        return len(self.records)


def _record(path: Path, split: str, label: int, defect: str, mask_path: Path | None) -> dict:
    return {
        "path": str(path),
        "split": split,
        "label": label,
        "defect": defect,
        "mask_path": str(mask_path) if mask_path is not None else None,
    }


def _resolve_mask(candidate: Path, image: Path, pixel_eval: bool) -> Path | None:
    if candidate.exists():
        return candidate
    if pixel_eval:
        raise DatasetError(f"Missing ground-truth mask for anomalous test image {image} (expected {candidate})")
    return None


def _index_mvtec(root: Path, category: str, pixel_eval: bool) -> list[dict]:
    base = root / category
    if not base.is_dir():
        raise FileNotFoundError(f"Category directory not found: {base}")

    train_dir = base / "train"
    if train_dir.is_dir():
        extra = sorted(d.name for d in train_dir.iterdir() if d.is_dir() and d.name != NORMAL_DEFECT)
        if extra:
            raise DatasetError(f"Training split must contain only normal images; found {extra} under {train_dir}")
    records = [_record(p, "train", 0, NORMAL_DEFECT, None) for p in _image_files(train_dir / NORMAL_DEFECT)]

    test_dir = base / "test"
    defects = sorted(d.name for d in test_dir.iterdir() if d.is_dir()) if test_dir.is_dir() else []
    gt_dir = base / "ground_truth"
    if pixel_eval and any(d != NORMAL_DEFECT for d in defects) and not gt_dir.is_dir():
        raise DatasetError(f"Ground-truth directory missing for pixel evaluation: {gt_dir}")

    for defect in defects:
        for path in _image_files(test_dir / defect):
            if defect == NORMAL_DEFECT:
                records.append(_record(path, "test", 0, defect, None))
            else:
                mask = _resolve_mask(gt_dir / defect / f"{path.stem}_mask.png", path, pixel_eval)
                records.append(_record(path, "test", 1, defect, mask))
    return records


def _index_flat(root: Path, pixel_eval: bool) -> list[dict]:
    records = [_record(p, "train", 0, NORMAL_DEFECT, None) for p in _image_files(root / "train")]
    records += [_record(p, "test", 0, NORMAL_DEFECT, None) for p in _image_files(root / "test" / "normal")]

    anomalous = _image_files(root / "test" / "anomalous")
    mask_dir = root / "masks"
    if pixel_eval and anomalous and not mask_dir.is_dir():
        raise DatasetError(f"Mask directory missing for pixel evaluation: {mask_dir}")
    for path in anomalous:
        mask = _resolve_mask(mask_dir / f"{path.stem}.png", path, pixel_eval)
        records.append(_record(path, "test", 1, "anomalous", mask))
    return records


def load_dataset(
    root: str | Path,
    layout: DatasetLayout | str = DatasetLayout.MVTEC,
    category: str = "toy",
    pixel_eval: bool = True,
) -> DatasetIndex:
    """
    Index a dataset directory.

    Raises:
        FileNotFoundError: If root (or the category directory) does not exist.
        DatasetError: On an empty split, a missing mask under pixel_eval,
            or an anomalous record in the training split.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"Dataset root not found: {root}")
    layout = DatasetLayout(layout)

    if layout == DatasetLayout.MVTEC:
        records = _index_mvtec(root, category, pixel_eval)
    else:
        records = _index_flat(root, pixel_eval)

    frame = pd.DataFrame(records, columns=RECORD_COLUMNS)
    frame = frame.sort_values(["split", "path"], kind="stable").reset_index(drop=True)

    for split in ("train", "test"):
        if not (frame["split"] == split).any():
            raise DatasetError(f"Empty {split} split in {root} (layout={layout.value}, category={category})")
    if (frame.loc[frame["split"] == "train", "label"] != 0).any():
        raise DatasetError("Training split contains anomalous records")

    index = DatasetIndex(root, layout, category, frame)
    logger.info(
        f"Indexed {root} ({layout.value}/{category}): {len(index.train)} train, "
        f"{int((index.test['label'] == 0).sum())} test-normal, {int((index.test['label'] == 1).sum())} test-anomalous"
    )
    return index


def load_mask(path: str | Path | None, size: int) -> np.ndarray:
    """Binary (size, size) uint8 mask; None gives an all-normal mask."""
    if path is None or (isinstance(path, float) and np.isnan(path)):
        return np.zeros((size, size), dtype=np.uint8)
    with Image.open(path) as img:
        gray = img.convert("L").resize((size, size), Image.Resampling.NEAREST)
        return (np.asarray(gray) > 127).astype(np.uint8)


class ImageSet:
    """Images of a record list loaded once at a fixed resolution."""

    def __init__(self, paths: list[str], image_size: int):
        if not paths:
            raise DatasetError("ImageSet needs at least one image")
        self.paths = list(paths)
        self.image_size = image_size
        self._cache: dict[int, Tensor] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index: int) -> Tensor:
        if index not in self._cache:
            self._cache[index] = load_image(self.paths[index], self.image_size)
        return self._cache[index]

    def batch(self, indices: np.ndarray | list[int]) -> Tensor:
        return torch.stack([self[int(i)] for i in indices])


TOY_TINT = np.array([0.85, 0.65, 0.45], dtype=np.float32)
TOY_FREQUENCY = 6.0


def _normal_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    phase = rng.uniform(-0.15, 0.15, size=2)
    pattern = np.sin(2 * np.pi * TOY_FREQUENCY * (xx + phase[0])) * np.sin(2 * np.pi * TOY_FREQUENCY * (yy + phase[1]))
    image = (0.5 + 0.2 * pattern)[..., None] * TOY_TINT
    image += rng.normal(0.0, 0.02, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _paste_defect(rng: np.random.Generator, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Replace one rectangle with a texture perturbation in the normal tint.

    The rectangle holds oriented stripes of a foreign frequency at the
    normal amplitude, a small brightness offset and a slight tint shift,
    so defects differ from the background in structure, not in colour.
    """
    size = image.shape[0]
    height, width = rng.integers(size // 8, size // 4 + 1, size=2)
    top = int(rng.integers(0, size - height + 1))
    left = int(rng.integers(0, size - width + 1))

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32) / size
    frequency = rng.choice([3.0, 10.0])
    angle = rng.uniform(0.0, np.pi)
    stripes = np.sin(2 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)) + rng.uniform(0.0, 2 * np.pi))
    shade = 0.5 + rng.uniform(-0.08, 0.08) + 0.2 * stripes
    tint = TOY_TINT * (1.0 + rng.uniform(-0.1, 0.1, size=3)).astype(np.float32)
    patch = shade[..., None] * tint + rng.normal(0.0, 0.02, size=(height, width, 3))

    defective = image.copy()
    defective[top:top + height, left:left + width] = np.clip(patch, 0.0, 1.0)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[top:top + height, left:left + width] = 1
    return defective, mask


def _save_rgb(array: np.ndarray, path: Path) -> None:
    Image.fromarray((array * 255.0).round().astype(np.uint8)).save(path)


def generate_toy_dataset(
    out_dir: str | Path,
    n_train: int = 32,
    n_test: int = 16,
    seed: int = 0,
    image_size: int = 64,
    category: str = "toy",
) -> DatasetIndex:
    """
    Write a small mvtec-layout dataset of textured images.

    Normal images share one tinted sinusoidal texture with jitter and
    noise; n_test anomalous test images carry one rectangle of foreign
    texture each, with an exact ground-truth mask.
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError(f"n_train and n_test must be positive, got {n_train}, {n_test}")
    rng = np.random.default_rng(seed)
    base = Path(out_dir) / category
    train_dir = base / "train" / NORMAL_DEFECT
    good_dir = base / "test" / NORMAL_DEFECT
    defect_dir = base / "test" / "patch"
    mask_dir = base / "ground_truth" / "patch"
    for directory in (train_dir, good_dir, defect_dir, mask_dir):
        directory.mkdir(parents=True, exist_ok=True)

    for i in range(n_train):
        _save_rgb(_normal_texture(rng, image_size), train_dir / f"{i:03d}.png")
    for i in range(n_test):
        _save_rgb(_normal_texture(rng, image_size), good_dir / f"{i:03d}.png")
    for i in range(n_test):
        defective, mask = _paste_defect(rng, _normal_texture(rng, image_size))
        _save_rgb(defective, defect_dir / f"{i:03d}.png")
        Image.fromarray(mask * 255).save(mask_dir / f"{i:03d}_mask.png")

    logger.info(f"Generated toy dataset at {base}: {n_train} train, {n_test} good + {n_test} defective test images")
    return load_dataset(out_dir, DatasetLayout.MVTEC, category)
