"""
Reconstruction objectives and test-time scoring.

All functions take (B, C, H, W) or (C, H, W) feature maps. Local terms
average over positions and batch; cosine denominators are clamped at
COS_EPS so zero vectors never divide by zero.
"""

import logging
import math
from dataclasses import asdict, dataclass

import torch.nn.functional as F
from torch import Tensor

logger = logging.getLogger(__name__)

COS_EPS = 1e-8


def _batched_pair(f_target: Tensor, f_hat: Tensor) -> tuple[Tensor, Tensor]:
    if f_target.shape != f_hat.shape:
        raise ValueError(f"Feature shapes differ: {tuple(f_target.shape)} vs {tuple(f_hat.shape)}")
    if f_target.dim() == 3:
        return f_target.unsqueeze(0), f_hat.unsqueeze(0)
    if f_target.dim() != 4:
        raise ValueError(f"Expected 3-D or 4-D feature maps, got {tuple(f_target.shape)}")
    return f_target, f_hat


def _cosine(a: Tensor, b: Tensor, dim: int) -> Tensor:
    dot = (a * b).sum(dim=dim)
    return dot / (a.norm(dim=dim).clamp_min(COS_EPS) * b.norm(dim=dim).clamp_min(COS_EPS))


def _squared_distance_map(f_target: Tensor, f_hat: Tensor) -> Tensor:
    return (f_hat - f_target).pow(2).sum(dim=1)


def _cosine_distance_map(f_target: Tensor, f_hat: Tensor) -> Tensor:
    return (1.0 - _cosine(f_target, f_hat, dim=1)).clamp(0.0, 2.0)


def local_mse_loss(f_target: Tensor, f_hat: Tensor) -> Tensor:
    """Mean over positions of the squared L2 distance between channel vectors."""
    f_target, f_hat = _batched_pair(f_target, f_hat)
    return _squared_distance_map(f_target, f_hat).mean()


def local_cos_loss(f_target: Tensor, f_hat: Tensor) -> Tensor:
    """Mean over positions of 1 - cos between channel vectors; in [0, 2]."""
    f_target, f_hat = _batched_pair(f_target, f_hat)
    return _cosine_distance_map(f_target, f_hat).mean()


def global_cos_loss(f_target: Tensor, f_hat: Tensor) -> Tensor:
    """1 - cos between the flattened maps, averaged over the batch; in [0, 2]."""
    f_target, f_hat = _batched_pair(f_target, f_hat)
    cos = _cosine(f_target.flatten(1), f_hat.flatten(1), dim=1)
    return (1.0 - cos).clamp(0.0, 2.0).mean()


def reconstruction_terms(f_target: Tensor, f_hat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    return local_mse_loss(f_target, f_hat), local_cos_loss(f_target, f_hat), global_cos_loss(f_target, f_hat)


def reconstruction_loss(f_target: Tensor, f_hat: Tensor) -> Tensor:
    """
    Local MSE + local cosine + global cosine.

    f_target is the clean normal feature map the input should be restored
    to, never the synthesized input itself.
    """
    mse, cos, glob = reconstruction_terms(f_target, f_hat)
    return mse + cos + glob


def joint_loss(l_rec: Tensor | float, l_aux: Tensor | float) -> Tensor | float:
    return l_rec + l_aux


@dataclass
class LossBreakdown:
    """
    Scalar loss terms of one training step.

    l_final always equals l_rec + l_aux.
    """

    l_local_mse: float
    l_local_cos: float
    l_global: float
    l_rec: float
    l_dis: float
    l_kl: float
    l_aux: float
    l_final: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(value) for value in asdict(self).values())


@dataclass
class AnomalyMap:
    """
    Test-time anomaly scores.

    Attributes:
        pixel_scores: (B, H, W) or (H, W) nonnegative map at output resolution
        image_score: (B,) or scalar population std of pixel_scores
    """

    pixel_scores: Tensor
    image_score: Tensor


def anomaly_map(f_in: Tensor, f_hat: Tensor, out_hw: tuple[int, int]) -> AnomalyMap:
    """
    Score map = squared-distance map * cosine-distance map, upsampled
    bilinearly to out_hw; the image score is its population std.

    Raises:
        ValueError: On shape mismatch or a nonpositive out_hw.
    """
    unbatched = f_in.dim() == 3
    f_in, f_hat = _batched_pair(f_in, f_hat)
    height, width = out_hw
    if height <= 0 or width <= 0:
        raise ValueError(f"out_hw must be positive, got {out_hw}")

    scores = (_squared_distance_map(f_in, f_hat) * _cosine_distance_map(f_in, f_hat)).unsqueeze(1)
    if tuple(scores.shape[-2:]) != (height, width):
        scores = F.interpolate(scores, size=(height, width), mode="bilinear", align_corners=False)
    pixel_scores = scores.squeeze(1).clamp_min(0.0)
    image_score = pixel_scores.flatten(1).std(dim=1, correction=0)

    if unbatched:
        return AnomalyMap(pixel_scores[0], image_score[0])
    return AnomalyMap(pixel_scores, image_score)
