"""
Uncertainty-aware anomaly perception.

Tokens from the patch embedding get a per-token Gaussian anomaly score
N(u, sigma^2). Training uses one reparameterized draw per branch with a
discriminative BCE loss plus a KL prior; inference draws M samples and
turns their mean and spread into a keep-mask for restoration attention.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum

import torch
import torch.nn.functional as F
from torch import Tensor, nn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerceptionConfig:
    """
    Perception settings.

    Attributes:
        patch: Patch side K of the token embedding
        gamma: Threshold scale for mask binarization
        kl_weight: Weight lambda of the KL term in the auxiliary loss
        num_samples: Score samples M drawn at test time
    """

    patch: int = 4
    gamma: float = 1.0
    kl_weight: float = 0.001
    num_samples: int = 16

    def __post_init__(self) -> None:
        if self.patch <= 0:
            raise ValueError(f"patch must be positive, got {self.patch}")
        if self.kl_weight < 0:
            raise ValueError(f"kl_weight must be nonnegative, got {self.kl_weight}")
        if self.num_samples < 2:
            raise ValueError(f"num_samples must be at least 2, got {self.num_samples}")


class KeepDirection(str, Enum):
    """Which side of the threshold a binarized mask keeps (1 = keep)."""

    LOW = "keep-low"
    HIGH = "keep-high"


class PatchEmbed(nn.Module):
    """Non-overlapping K x K patch embedding: stride-K convolution, then row-major flatten."""

    def __init__(self, in_channels: int, dim: int, patch: int):
        super().__init__()
        self.patch = patch
        self.dim = dim
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch, stride=patch)

    def grid(self, height: int, width: int) -> tuple[int, int]:
        if height % self.patch or width % self.patch:
            raise ValueError(f"Feature size {height}x{width} is not divisible by patch {self.patch}")
        return height // self.patch, width // self.patch

    def forward(self, features: Tensor) -> Tensor:
        self.grid(*features.shape[-2:])
        return self.proj(features).flatten(2).transpose(1, 2)


def embed_tokens(features: Tensor, embed: PatchEmbed) -> Tensor:
    """
    Embed a (B, C, H, W) or (C, H, W) feature map into (B, L, D) / (L, D) tokens.

    Token t covers rows [r*K, r*K + K) and columns [c*K, c*K + K) with t = r * (W/K) + c.
    """
    if features.dim() == 3:
        return embed(features.unsqueeze(0)).squeeze(0)
    return embed(features)


@dataclass
class ScoreDistribution:
    """
    Per-token Gaussian anomaly scores.

    Attributes:
        u: (B, L) means
        sigma: (B, L) standard deviations, positive
        samples: Optional (M, B, L) drawn score sequences
    """

    u: Tensor
    sigma: Tensor
    samples: Tensor | None = None

    def detach(self) -> "ScoreDistribution":
        samples = self.samples.detach() if self.samples is not None else None
        return ScoreDistribution(self.u.detach(), self.sigma.detach(), samples)

    @classmethod
    def concat(cls, parts: list["ScoreDistribution"]) -> "ScoreDistribution":
        """Join distributions along the token axis."""
        return cls(torch.cat([p.u for p in parts], dim=-1), torch.cat([p.sigma for p in parts], dim=-1))


class PerceptionHead(nn.Module):
    """Two linear maps per token: one for the mean, one (through softplus) for sigma."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mean = nn.Linear(dim, 1)
        self.scale = nn.Linear(dim, 1)

    def forward(self, tokens: Tensor) -> ScoreDistribution:
        if tokens.shape[-1] != self.dim:
            raise ValueError(f"Token dimension {tokens.shape[-1]} does not match head dimension {self.dim}")
        u = self.mean(tokens).squeeze(-1)
        sigma = F.softplus(self.scale(tokens)).squeeze(-1)
        return ScoreDistribution(u, sigma)


def predict_distribution(tokens: Tensor, head: PerceptionHead) -> ScoreDistribution:
    """Per-token (u, sigma) for (B, L, D) or (L, D) tokens."""
    return head(tokens)


def sample_scores(dist: ScoreDistribution, eps: Tensor) -> Tensor:
    """Reparameterized draw z = u + eps * sigma."""
    if eps.shape != dist.u.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} does not match score shape {tuple(dist.u.shape)}")
    return dist.u + eps * dist.sigma


def _check_labels(labels: Tensor, name: str) -> None:
    if not torch.all((labels == 0) | (labels == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")


def discriminative_loss(z_sa: Tensor, g_sa: Tensor, z_n: Tensor, g_n: Tensor) -> Tensor:
    """
    BCE(z_sa, g_sa) + BCE(z_n, g_n), logits squashed inside the loss.

    Each term is a mean over its tokens (and batch).

    Raises:
        ValueError: If shapes differ or labels are not binary.
    """
    if z_sa.shape != g_sa.shape or z_n.shape != g_n.shape:
        raise ValueError(
            f"Score/label shapes differ: {tuple(z_sa.shape)}/{tuple(g_sa.shape)}, "
            f"{tuple(z_n.shape)}/{tuple(g_n.shape)}"
        )
    _check_labels(g_sa, "g_sa")
    _check_labels(g_n, "g_n")
    anomalous = F.binary_cross_entropy_with_logits(z_sa, g_sa.to(z_sa.dtype))
    normal = F.binary_cross_entropy_with_logits(z_n, g_n.to(z_n.dtype))
    return anomalous + normal


def kl_loss(dist: ScoreDistribution) -> Tensor:
    """
    KL(N(u, sigma^2) || N(0, 1)) averaged over tokens.

    Raises:
        ValueError: If any sigma is not positive.
    """
    if torch.any(dist.sigma <= 0):
        raise ValueError("kl_loss needs strictly positive sigma")
    var = dist.sigma.pow(2)
    return (-0.5 * (1.0 + torch.log(var) - dist.u.pow(2) - var)).mean()


def auxiliary_loss(l_dis: Tensor | float, l_kl: Tensor | float, kl_weight: float = 0.001) -> Tensor | float:
    return l_dis + kl_weight * l_kl


def _score_noise(dist: ScoreDistribution, m: int, seed: int, eps: Tensor | None) -> Tensor:
    if m < 2:
        raise ValueError(f"Need at least 2 score draws, got m={m}")
    num_tokens = dist.u.shape[-1]
    if eps is None:
        generator = torch.Generator().manual_seed(seed)
        eps = torch.randn((m, num_tokens), generator=generator, dtype=dist.u.dtype)
    eps = eps.to(dist.u.device)
    if eps.shape[0] != m or eps.shape[-1] != num_tokens:
        raise ValueError(f"eps shape {tuple(eps.shape)} does not match m={m}, L={num_tokens}")
    if eps.dim() == 2:
        eps = eps.view(m, *([1] * (dist.u.dim() - 1)), num_tokens)
    return eps * dist.sigma.unsqueeze(0)


def draw_score_samples(
    dist: ScoreDistribution,
    m: int,
    seed: int = 0,
    eps: Tensor | None = None,
) -> ScoreDistribution:
    """Copy of dist carrying m drawn score sequences in samples; dist is left as is."""
    return replace(dist, samples=dist.u.unsqueeze(0) + _score_noise(dist, m, seed, eps))


def estimate_mean_uncertainty(
    dist: ScoreDistribution,
    m: int,
    seed: int = 0,
    eps: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """
    Draw m score sequences and return their per-token mean U and population std V.

    Args:
        dist: Score distribution with (..., L) u and sigma. Not modified.
        m: Number of draws, at least 2.
        seed: Seed of the standard-normal draws. The same (m, L) draws are
            shared by every item of a batch, so an image scores the same
            whatever batch it arrives in.
        eps: Optional explicit (m, L) or (m, ..., L) draws, overriding seed.

    Returns:
        (U, V), each shaped like dist.u.

    Raises:
        ValueError: If m < 2 or eps has the wrong shape.
    """
    noise = _score_noise(dist, m, seed, eps)
    mean = dist.u + noise.mean(dim=0)
    spread = noise.std(dim=0, correction=0)
    return mean, spread


def binarize(seq: Tensor, gamma: float = 1.0, direction: KeepDirection = KeepDirection.LOW) -> Tensor:
    """
    Threshold each sequence (last axis) at mean +/- gamma * population std.

    KeepDirection.LOW keeps values <= mean + gamma * std; HIGH keeps
    values >= mean - gamma * std. A sequence whose values are all equal is
    kept whole.

    Returns:
        Float mask of 0/1 shaped like seq.
    """
    if seq.shape[-1] < 1:
        raise ValueError("binarize needs at least one value")
    mean = seq.mean(dim=-1, keepdim=True)
    spread = seq.std(dim=-1, keepdim=True, correction=0)
    degenerate = seq.amax(dim=-1, keepdim=True) == seq.amin(dim=-1, keepdim=True)

    if KeepDirection(direction) == KeepDirection.LOW:
        keep = seq <= mean + gamma * spread
    else:
        keep = seq >= mean - gamma * spread
    return (keep | degenerate).to(seq.dtype)


def fuse_masks(m_u: Tensor, m_v: Tensor) -> Tensor:
    """Intersection of two keep-masks: a token survives only if both keep it."""
    if m_u.shape != m_v.shape:
        raise ValueError(f"Mask shapes differ: {tuple(m_u.shape)} vs {tuple(m_v.shape)}")
    _check_labels(m_u, "m_u")
    _check_labels(m_v, "m_v")
    return m_u * m_v


@dataclass
class MaskFusionResult:
    """
    Mean/uncertainty sequences and the masks derived from them (1 = keep).

    Attributes:
        U: Mean sequence
        V: Uncertainty sequence
        m_u: Keep-mask from U
        m_v: Keep-mask from V
        m_final: m_u AND m_v
    """

    U: Tensor
    V: Tensor
    m_u: Tensor
    m_v: Tensor
    m_final: Tensor


def perception_masks(
    dist: ScoreDistribution,
    gamma: float = 1.0,
    num_samples: int | None = None,
    seed: int = 0,
) -> MaskFusionResult:
    """
    Build the keep-mask fed to restoration attention.

    With num_samples=None (training) U and V are the analytic moments
    u and sigma; otherwise they are estimated from num_samples draws.
    The result carries no gradient.
    """
    dist = dist.detach()
    if num_samples is None:
        mean, spread = dist.u, dist.sigma
    else:
        mean, spread = estimate_mean_uncertainty(dist, num_samples, seed)
    m_u = binarize(mean, gamma, KeepDirection.LOW)
    m_v = binarize(spread, gamma, KeepDirection.LOW)
    m_final = fuse_masks(m_u, m_v)
    logger.debug(f"Perception mask keeps {m_final.mean().item():.3f} of tokens")
    return MaskFusionResult(mean, spread, m_u, m_v, m_final)
