"""
Image augmentation policies for synthetic anomaly construction.

Anomaly-source images get a strong photometric policy; normal images
only get mild brightness/contrast jitter. Images are (3, H, W) float
tensors with values in [0, 1], before backbone normalization.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torch import Tensor

logger = logging.getLogger(__name__)

SOURCE_OPS = ("posterize", "sharpness", "solarize", "equalize", "brightness", "color", "contrast")
NORMAL_OPS = ("brightness", "contrast")

# (low, high) per op; posterize draws integer bits, equalize takes no value
SOURCE_RANGES = {
    "posterize": (2.0, 6.0),
    "sharpness": (0.5, 2.0),
    "solarize": (0.25, 0.75),
    "equalize": (0.0, 0.0),
    "brightness": (0.7, 1.3),
    "color": (0.3, 1.7),
    "contrast": (0.7, 1.3),
}
NORMAL_RANGES = {
    "brightness": (0.9, 1.1),
    "contrast": (0.9, 1.1),
}


class PolicyKind(str, Enum):
    """Which image an augmentation policy is meant for."""

    SOURCE = "source"
    NORMAL = "normal"


PERMITTED_OPS = {
    PolicyKind.SOURCE: SOURCE_OPS,
    PolicyKind.NORMAL: NORMAL_OPS,
}


@dataclass(frozen=True)
class AugmentationPolicy:
    """
    A seeded augmentation policy.

    Attributes:
        kind: SOURCE or NORMAL; fixes the permitted op set
        ops: Ops to sample from, a subset of the permitted set
        n_ops: Ops applied per image, drawn without replacement
        ranges: Parameter range per op
        seed: Seed of the op and parameter draw
    """

    kind: PolicyKind
    ops: tuple[str, ...]
    n_ops: int = 3
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        permitted = PERMITTED_OPS[PolicyKind(self.kind)]
        for op in self.ops:
            if op not in permitted:
                raise ValueError(
                    f"Op '{op}' is not permitted for a {PolicyKind(self.kind).value} policy "
                    f"(allowed: {permitted})"
                )
        if self.n_ops < 0:
            raise ValueError(f"n_ops must be nonnegative, got {self.n_ops}")

    @classmethod
    def source(cls, seed: int = 0, n_ops: int = 3) -> "AugmentationPolicy":
        return cls(PolicyKind.SOURCE, SOURCE_OPS, n_ops, dict(SOURCE_RANGES), seed)

    @classmethod
    def normal(cls, seed: int = 0, n_ops: int = 3) -> "AugmentationPolicy":
        return cls(PolicyKind.NORMAL, NORMAL_OPS, n_ops, dict(NORMAL_RANGES), seed)

    def with_seed(self, seed: int) -> "AugmentationPolicy":
        return replace(self, seed=seed)

    def sample_ops(self) -> list[tuple[str, float]]:
        """Draw the (op, value) list for this seed."""
        if not self.ops or self.n_ops == 0:
            return []
        rng = np.random.default_rng(self.seed)
        count = min(self.n_ops, len(self.ops))
        chosen = rng.choice(len(self.ops), size=count, replace=False)
        sampled = []
        for index in chosen:
            name = self.ops[int(index)]
            low, high = self.ranges.get(name, SOURCE_RANGES[name])
            if name == "posterize":
                value = float(rng.integers(int(low), int(high) + 1))
            else:
                value = float(rng.uniform(low, high))
            sampled.append((name, value))
        return sampled


def _to_uint8(image: Tensor) -> Tensor:
    return (image.clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)


def _from_uint8(image: Tensor, dtype: torch.dtype) -> Tensor:
    return image.to(dtype) / 255.0


def apply_op(image: Tensor, name: str, value: float) -> Tensor:
    """
    Apply one named op with its parameter to a [0, 1] image.

    Raises:
        ValueError: For an unknown op name.
    """
    if name == "posterize":
        return _from_uint8(TF.posterize(_to_uint8(image), int(value)), image.dtype)
    if name == "equalize":
        return _from_uint8(TF.equalize(_to_uint8(image)), image.dtype)
    if name == "solarize":
        return TF.solarize(image, value)
    if name == "sharpness":
        return TF.adjust_sharpness(image, value)
    if name == "brightness":
        return TF.adjust_brightness(image, value)
    if name == "color":
        return TF.adjust_saturation(image, value)
    if name == "contrast":
        return TF.adjust_contrast(image, value)
    raise ValueError(f"Unknown augmentation op '{name}'")


def augment(image: Tensor, policy: AugmentationPolicy) -> Tensor:
    """
    Apply the policy's seeded random op subset to an image.

    Returns:
        A new tensor of the same shape; the input is not modified.
    """
    if image.shape[-3] != 3:
        raise ValueError(f"Expected a 3-channel image, got shape {tuple(image.shape)}")
    out = image
    for name, value in policy.sample_ops():
        out = apply_op(out, name, value)
    logger.debug(f"Augmented with {policy.kind} policy seed={policy.seed}")
    return out.clone() if out is image else out


def speckle_noise(image: Tensor, p: float, seed: int = 0) -> Tensor:
    """
    Replace each pixel by a uniformly random colour with probability p.

    Used for the robustness sweep; p = 0 returns an exact copy.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    generator = torch.Generator().manual_seed(seed)
    height, width = image.shape[-2:]
    replace_mask = torch.rand((height, width), generator=generator) < p
    colours = torch.rand((3, height, width), generator=generator).to(image.dtype)
    return torch.where(replace_mask.to(image.device), colours.to(image.device), image)
