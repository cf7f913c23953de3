"""
Backbone feature module.
Extracts multi-level activations from a frozen backbone and fuses them
into the single feature map that the network learns to reconstruct.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import Tensor, nn

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class UnknownBackboneError(KeyError):
    """Raised when a backbone name is not in the registry."""


@dataclass(frozen=True)
class BackboneSpec:
    """
    Identifies a frozen backbone and the levels to fuse.

    Attributes:
        name: Registry key ("toy" or "wide_resnet50_2")
        levels: Level indices to extract, in fusion order
        frozen: Always True, the backbone is never trained
        seed: Weight seed of the toy backbone
        mean: Per-channel normalization mean
        std: Per-channel normalization std
        widths: Stage widths of the toy backbone
        weights_path: Local state-dict file for pretrained backbones
    """

    name: str = "toy"
    levels: tuple[int, ...] = (0, 1, 2)
    frozen: bool = True
    seed: int = 0
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    widths: tuple[int, ...] = (8, 16, 32)
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("BackboneSpec.levels must not be empty")
        if not self.frozen:
            raise ValueError("Backbones are frozen; frozen=False is not supported")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"Normalization std must be positive, got {self.std}")


class FeatureBackbone(nn.Module):
    """Base class: a frozen network exposing a list of stage outputs."""

    def __init__(self, level_channels: Sequence[int]):
        super().__init__()
        self.level_channels = tuple(level_channels)

    @property
    def num_levels(self) -> int:
        return len(self.level_channels)

    def forward_levels(self, images: Tensor) -> list[Tensor]:
        raise NotImplementedError


_REGISTRY: dict[str, Callable[[BackboneSpec], FeatureBackbone]] = {}


def register_backbone(name: str):
    """Decorator registering a backbone factory under a name."""

    def _wrap(factory: Callable[[BackboneSpec], FeatureBackbone]):
        _REGISTRY[name] = factory
        return factory

    return _wrap


def registered_backbones() -> list[str]:
    return sorted(_REGISTRY)


class ToyBackbone(FeatureBackbone):
    """
    Strided convolutional stages with fixed seeded random weights.

    Each stage halves the spatial size. Weights come from a private
    generator so two instances with the same seed are identical in
    any process.
    """

    def __init__(self, widths: Sequence[int], seed: int):
        super().__init__(widths)
        generator = torch.Generator().manual_seed(seed)
        stages = []
        in_ch = 3
        for width in widths:
            conv = nn.Conv2d(in_ch, width, kernel_size=3, stride=2, padding=1)
            fan_in = in_ch * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=generator) * 0.01)
            stages.append(nn.Sequential(conv, nn.ReLU()))
            in_ch = width
        self.stages = nn.ModuleList(stages)

    def forward_levels(self, images: Tensor) -> list[Tensor]:
        outputs = []
        x = images
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs


class WideResNetBackbone(FeatureBackbone):
    """Wide residual network (50 layers, width x2); levels are residual stages 1-4."""

    STAGES = ("layer1", "layer2", "layer3", "layer4")
    CHANNELS = (256, 512, 1024, 2048)

    def __init__(self, weights_path: str | None):
        super().__init__(self.CHANNELS)
        from torchvision import models
        from torchvision.models import feature_extraction

        cnn = models.wide_resnet50_2(weights=None)
        if weights_path:
            path = Path(weights_path)
            if not path.exists():
                raise FileNotFoundError(f"Backbone weights not found: {path}")
            state = torch.load(path, map_location="cpu", weights_only=True)
            cnn.load_state_dict(state)
            logger.info(f"Loaded backbone weights from {path}")
        else:
            logger.warning("No backbone weights path configured; using random initialization")

        self.body = feature_extraction.create_feature_extractor(
            cnn, return_nodes={stage: stage for stage in self.STAGES}
        )

    def forward_levels(self, images: Tensor) -> list[Tensor]:
        out = self.body(images)
        return [out[stage] for stage in self.STAGES]


@register_backbone("toy")
def _build_toy(spec: BackboneSpec) -> FeatureBackbone:
    return ToyBackbone(spec.widths, spec.seed)


@register_backbone("wide_resnet50_2")
def _build_wide_resnet(spec: BackboneSpec) -> FeatureBackbone:
    return WideResNetBackbone(spec.weights_path)


@lru_cache(maxsize=4)
def get_backbone(spec: BackboneSpec) -> FeatureBackbone:
    """
    Build (once per spec) the frozen backbone for a spec.

    Raises:
        UnknownBackboneError: If spec.name is not registered.
        ValueError: If a requested level does not exist.
    """
    if spec.name not in _REGISTRY:
        raise UnknownBackboneError(
            f"Unknown backbone '{spec.name}'. Registered: {registered_backbones()}"
        )
    backbone = _REGISTRY[spec.name](spec)
    for level in spec.levels:
        if not 0 <= level < backbone.num_levels:
            raise ValueError(
                f"Level {level} out of range for backbone '{spec.name}' "
                f"with {backbone.num_levels} levels"
            )
    backbone.eval()
    for param in backbone.parameters():
        param.requires_grad_(False)
    logger.info(
        f"Backbone '{spec.name}' ready: levels {list(spec.levels)}, "
        f"channels {[backbone.level_channels[i] for i in spec.levels]}"
    )
    return backbone


def fused_channels(spec: BackboneSpec) -> int:
    """Channel count C_F of the fused map for a spec."""
    backbone = get_backbone(spec)
    return sum(backbone.level_channels[i] for i in spec.levels)


def _check_image(image: Tensor) -> Tensor:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValueError(f"Expected a 3-channel image tensor, got shape {tuple(image.shape)}")
    if image.shape[2] <= 0 or image.shape[3] <= 0:
        raise ValueError(f"Image has empty spatial size: {tuple(image.shape)}")
    return image


def extract_multilevel(image: Tensor, spec: BackboneSpec) -> list[Tensor]:
    """
    Run the backbone and return one activation map per requested level.

    Args:
        image: (3, H, W) or (B, 3, H, W) tensor with values in [0, 1].
        spec: Backbone specification; normalization uses spec.mean/std.

    Returns:
        List of (B, C_l, H_l, W_l) tensors in spec.levels order.
    """
    batch = _check_image(image)
    backbone = get_backbone(spec)
    param = next(backbone.parameters())
    mean = torch.tensor(spec.mean, dtype=batch.dtype, device=batch.device).view(1, 3, 1, 1)
    std = torch.tensor(spec.std, dtype=batch.dtype, device=batch.device).view(1, 3, 1, 1)
    normalized = (batch - mean) / std

    with torch.no_grad():
        levels = backbone.forward_levels(normalized.to(device=param.device, dtype=param.dtype))

    selected = []
    for index in spec.levels:
        feature = levels[index].to(device=batch.device, dtype=batch.dtype)
        if feature.shape[-1] < 1 or feature.shape[-2] < 1:
            raise ValueError(f"Level {index} produced an empty map for input {tuple(batch.shape)}")
        selected.append(feature)
    return selected


def fuse_levels(features: Sequence[Tensor], target_hw: tuple[int, int]) -> Tensor:
    """
    Resize every level to target_hw (bilinear, align_corners=False) and
    concatenate along channels in input order.

    Raises:
        ValueError: On an empty list or a nonpositive target size.
    """
    if not features:
        raise ValueError("fuse_levels needs at least one feature map")
    height, width = target_hw
    if height <= 0 or width <= 0:
        raise ValueError(f"target_hw must be positive, got {target_hw}")

    resized = []
    for feature in features:
        batched = feature if feature.dim() == 4 else feature.unsqueeze(0)
        if tuple(batched.shape[-2:]) != (height, width):
            batched = F.interpolate(batched, size=(height, width), mode="bilinear", align_corners=False)
        resized.append(batched)
    fused = torch.cat(resized, dim=1)
    return fused if features[0].dim() == 4 else fused.squeeze(0)


class FeatureExtractor:
    """
    Callable producing fused feature maps F(I) for a batch of images.

    Holds the spec and the fused spatial size so the pipeline can treat
    feature extraction as one step.
    """

    def __init__(self, spec: BackboneSpec, feature_size: int):
        self.spec = spec
        self.feature_size = feature_size
        self.channels = fused_channels(spec)
        logger.info(f"FeatureExtractor: {self.channels} channels at {feature_size}x{feature_size}")

    def to(self, device: torch.device | str) -> "FeatureExtractor":
        get_backbone(self.spec).to(device)
        return self

    def __call__(self, images: Tensor) -> Tensor:
        levels = extract_multilevel(images, self.spec)
        return fuse_levels(levels, (self.feature_size, self.feature_size))
