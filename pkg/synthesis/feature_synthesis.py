"""
Feature-level anomaly synthesis.

Normal features and anomaly-source features are blended under a Perlin
mask; the mask, max-pooled per patch, gives the token-level ground truth.
An image-level variant (paste pixels, then extract) exists for ablation.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from features.backbone import FeatureExtractor
from synthesis.augment import AugmentationPolicy, augment
from synthesis.perlin import PerlinParams, perlin_mask
from synthesis.sources import AnomalySourceBank

logger = logging.getLogger(__name__)


class SynthesisMode(str, Enum):
    """Where synthetic anomalies are injected during training."""

    NONE = "none"
    FEATURE = "feature"
    IMAGE = "image"


@dataclass(frozen=True)
class SynthesisConfig:
    """
    Synthesis settings.

    Attributes:
        scale_range: Perlin lattice resolutions (powers of two)
        threshold: Perlin binarization threshold
        source_dir: Directory of anomaly-source images (None = procedural)
        n_source_ops: Augmentation ops per source image
        n_normal_ops: Augmentation ops per normal image
        n_procedural_sources: Texture count when no source_dir is given
        max_resamples: Retries before the block fallback for an empty mask
    """

    scale_range: tuple[int, int] = (1, 16)
    threshold: float = 0.5
    source_dir: str | None = None
    n_source_ops: int = 3
    n_normal_ops: int = 3
    n_procedural_sources: int = 64
    max_resamples: int = 8


class _CallCounter:
    """Counts synthesize_features invocations (inference must leave it at 0)."""

    def __init__(self) -> None:
        self.count = 0

    def increment(self) -> None:
        self.count += 1

    def reset(self) -> None:
        self.count = 0


synthesis_calls = _CallCounter()


def _is_binary(mask: Tensor) -> bool:
    return bool(torch.all((mask == 0) | (mask == 1)))


def synthesize_features(f_normal: Tensor, f_source: Tensor, mask: Tensor) -> Tensor:
    """
    Keep normal features where mask = 0 and take source features where mask = 1.

    Args:
        f_normal: (B, C, H, W) or (C, H, W) normal features.
        f_source: Anomaly-source features, same shape.
        mask: (H, W), (B, H, W) or (B, 1, H, W) binary mask, broadcast over channels.

    Raises:
        ValueError: On shape mismatch or a non-binary mask.
    """
    if f_normal.shape != f_source.shape:
        raise ValueError(
            f"Feature shapes differ: normal {tuple(f_normal.shape)} vs source {tuple(f_source.shape)}"
        )
    if tuple(mask.shape[-2:]) != tuple(f_normal.shape[-2:]):
        raise ValueError(
            f"Mask spatial size {tuple(mask.shape[-2:])} does not match features {tuple(f_normal.shape[-2:])}"
        )
    if not _is_binary(mask):
        raise ValueError("Anomaly mask must contain only 0 and 1")

    if f_normal.dim() == 4:
        if mask.dim() == 2:
            selector = mask.view(1, 1, *mask.shape)
        elif mask.dim() == 3:
            selector = mask.unsqueeze(1)
        else:
            selector = mask
        if selector.shape[0] not in (1, f_normal.shape[0]):
            raise ValueError(f"Mask batch {selector.shape[0]} does not match features {f_normal.shape[0]}")
    elif f_normal.dim() == 3:
        if mask.dim() != 2:
            raise ValueError(f"Unbatched features need a 2-D mask, got {tuple(mask.shape)}")
        selector = mask.unsqueeze(0)
    else:
        raise ValueError(f"Expected 3-D or 4-D features, got {tuple(f_normal.shape)}")

    synthesis_calls.increment()
    return torch.where(selector.to(f_normal.device).bool(), f_source, f_normal)


def token_ground_truth(mask: Tensor | np.ndarray, patch: int) -> Tensor:
    """
    Max-pool a mask over non-overlapping patch x patch cells and flatten row-major.

    Args:
        mask: (H, W), (B, H, W) or (B, 1, H, W) binary mask.
        patch: Patch side K; must divide H and W.

    Returns:
        (L,) labels for a 2-D mask, else (B, L), with L = (H/K)(W/K).
    """
    tensor = torch.as_tensor(mask).to(torch.float32) if isinstance(mask, np.ndarray) else mask.float()
    unbatched = tensor.dim() == 2
    if unbatched:
        tensor = tensor.view(1, 1, *tensor.shape)
    elif tensor.dim() == 3:
        tensor = tensor.unsqueeze(1)
    height, width = tensor.shape[-2:]
    if patch <= 0 or height % patch or width % patch:
        raise ValueError(f"Mask size {height}x{width} is not divisible by patch {patch}")
    if not _is_binary(tensor):
        raise ValueError("Anomaly mask must contain only 0 and 1")

    labels = F.max_pool2d(tensor, kernel_size=patch, stride=patch).flatten(1)
    return labels[0] if unbatched else labels


def _derived_seed(seed: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def sample_anomaly_mask(params: PerlinParams, patch: int, max_resamples: int = 8) -> np.ndarray:
    """
    Perlin mask that is never empty.

    An empty draw is retried with derived seeds up to max_resamples times;
    after that a single random patch-aligned K x K block is marked.
    """
    for attempt in range(max_resamples + 1):
        seed = params.seed if attempt == 0 else _derived_seed(params.seed, attempt)
        mask = perlin_mask(replace(params, seed=seed))
        if mask.any():
            return mask

    logger.warning(f"Perlin mask empty after {max_resamples} resamples (seed={params.seed}); using a block")
    rng = np.random.default_rng(_derived_seed(params.seed, max_resamples + 1))
    block = min(patch, params.height, params.width)
    mask = np.zeros((params.height, params.width), dtype=np.uint8)
    top = int(rng.integers(0, params.height // block)) * block
    left = int(rng.integers(0, params.width // block)) * block
    mask[top:top + block, left:left + block] = 1
    return mask


def paste_image_anomaly(normal: Tensor, source: Tensor, mask: Tensor) -> Tensor:
    """
    Image-level synthesis: source pixels where mask = 1, normal pixels elsewhere.

    Args:
        normal: (B, 3, H, W) or (3, H, W) images.
        source: Same shape as normal.
        mask: (H, W) or (B, H, W) binary mask at image resolution.
    """
    if normal.shape != source.shape:
        raise ValueError(f"Image shapes differ: {tuple(normal.shape)} vs {tuple(source.shape)}")
    if tuple(mask.shape[-2:]) != tuple(normal.shape[-2:]):
        raise ValueError(f"Mask size {tuple(mask.shape[-2:])} does not match images {tuple(normal.shape[-2:])}")
    if not _is_binary(mask):
        raise ValueError("Anomaly mask must contain only 0 and 1")
    selector = mask.unsqueeze(-3).bool()
    return torch.where(selector, source, normal)


@dataclass
class SynthesisBatch:
    """
    One training batch after synthesis.

    Attributes:
        f_normal: Reconstruction target F_n, (B, C, H_F, W_F)
        f_input: Network input F_sa (equals f_normal when synthesis is off)
        masks: (B, H_F, W_F) anomaly masks, 1 = synthetic anomaly
        labels: (B, L) token ground truth
        normal_labels: (B, L) zeros for the normal branch
    """

    f_normal: Tensor
    f_input: Tensor
    masks: Tensor
    labels: Tensor
    normal_labels: Tensor


class AnomalySynthesizer:
    """
    Builds (F_n, F_sa, mask, labels) training pairs from a batch of normal images.

    Every random choice is derived from the step seed, so a given
    (batch, step_seed) always yields the same pair.
    """

    def __init__(
        self,
        extractor: FeatureExtractor,
        sources: AnomalySourceBank | None,
        config: SynthesisConfig,
        patch: int,
        mode: SynthesisMode = SynthesisMode.FEATURE,
    ):
        self.extractor = extractor
        self.sources = sources
        self.config = config
        self.patch = patch
        self.mode = SynthesisMode(mode)
        self.normal_policy = AugmentationPolicy.normal(n_ops=config.n_normal_ops)
        self.source_policy = AugmentationPolicy.source(n_ops=config.n_source_ops)
        if self.mode != SynthesisMode.NONE and sources is None:
            raise ValueError(f"Synthesis mode '{self.mode.value}' needs an anomaly source bank")
        logger.info(f"AnomalySynthesizer initialized (mode={self.mode.value}, patch={patch})")

    def draw_masks(self, count: int, seeds: np.ndarray) -> np.ndarray:
        size = self.extractor.feature_size
        masks = [
            sample_anomaly_mask(
                PerlinParams(size, size, self.config.scale_range, self.config.threshold, int(seed)),
                self.patch,
                self.config.max_resamples,
            )
            for seed in seeds[:count]
        ]
        return np.stack(masks)

    def __call__(self, images: Tensor, step_seed: int) -> SynthesisBatch:
        rng = np.random.default_rng(step_seed)
        batch_size = images.shape[0]
        seeds = rng.integers(0, 2**31 - 1, size=(3, batch_size))

        normal = torch.stack(
            [augment(img, self.normal_policy.with_seed(int(s))) for img, s in zip(images, seeds[0])]
        )
        f_normal = self.extractor(normal)
        num_tokens = (f_normal.shape[-2] // self.patch) * (f_normal.shape[-1] // self.patch)
        zeros = torch.zeros(batch_size, num_tokens, dtype=f_normal.dtype, device=f_normal.device)

        if self.mode == SynthesisMode.NONE:
            empty = torch.zeros(batch_size, *f_normal.shape[-2:], dtype=f_normal.dtype, device=f_normal.device)
            return SynthesisBatch(f_normal, f_normal, empty, zeros, zeros.clone())

        raw_sources = self.sources.draw(batch_size, rng).to(device=images.device, dtype=images.dtype)
        sources = torch.stack(
            [augment(img, self.source_policy.with_seed(int(s))) for img, s in zip(raw_sources, seeds[1])]
        )
        masks = torch.from_numpy(self.draw_masks(batch_size, seeds[2])).to(
            device=f_normal.device, dtype=f_normal.dtype
        )

        if self.mode == SynthesisMode.FEATURE:
            f_input = synthesize_features(f_normal, self.extractor(sources), masks)
        else:
            image_masks = F.interpolate(masks.unsqueeze(1), size=images.shape[-2:], mode="nearest").squeeze(1)
            f_input = self.extractor(paste_image_anomaly(normal, sources, image_masks))

        labels = token_ground_truth(masks, self.patch)
        logger.debug(f"Synthesized batch step_seed={step_seed}: anomalous fraction {masks.mean().item():.3f}")
        return SynthesisBatch(f_normal, f_input, masks, labels, zeros)
