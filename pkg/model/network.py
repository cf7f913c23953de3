"""
Restoration network.

Assembles the perception head and the reconstructor according to the
ablation flags, and implements one training step's losses and the
synthesis-free test-time scoring.
"""

import logging
from dataclasses import asdict, dataclass, field

import torch
from torch import Tensor, nn

from model.objectives import (
    AnomalyMap,
    LossBreakdown,
    anomaly_map,
    joint_loss,
    reconstruction_terms,
)
from model.perception import (
    MaskFusionResult,
    PerceptionConfig,
    PerceptionHead,
    ScoreDistribution,
    auxiliary_loss,
    discriminative_loss,
    kl_loss,
    perception_masks,
    sample_scores,
)
from model.restoration import Reconstructor, ReconstructorConfig
from synthesis.feature_synthesis import SynthesisBatch, SynthesisMode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationFlags:
    """
    Component switches.

    Attributes:
        use_feature_synthesis: Synthesize anomalies in feature space
        use_image_synthesis: Synthesize anomalies in image space
        use_perception: Train the perception head and mask restoration attention
        use_restoration_attention: Masked ReLU attention in the restoration blocks
        remove_first_skip: Drop the residual around the first attention branch
    """

    use_feature_synthesis: bool = True
    use_image_synthesis: bool = False
    use_perception: bool = True
    use_restoration_attention: bool = True
    remove_first_skip: bool = True

    def __post_init__(self) -> None:
        if self.use_feature_synthesis and self.use_image_synthesis:
            raise ValueError("use_feature_synthesis and use_image_synthesis are mutually exclusive")

    @property
    def synthesis_mode(self) -> SynthesisMode:
        if self.use_feature_synthesis:
            return SynthesisMode.FEATURE
        if self.use_image_synthesis:
            return SynthesisMode.IMAGE
        return SynthesisMode.NONE

    @classmethod
    def variant(cls, name: str) -> "AblationFlags":
        key = name.upper()
        if key not in VARIANTS:
            raise ValueError(f"Unknown variant '{name}'. Expected one of {sorted(VARIANTS)}")
        return VARIANTS[key]

    def to_dict(self) -> dict[str, bool]:
        return asdict(self)


# A: plain reconstruction; B/C: image/feature synthesis; D: + perception;
# E: + restoration attention; F: + first residual removed
VARIANTS = {
    "A": AblationFlags(False, False, False, False, False),
    "B": AblationFlags(False, True, False, False, False),
    "C": AblationFlags(True, False, False, False, False),
    "D": AblationFlags(True, False, True, False, False),
    "E": AblationFlags(True, False, True, True, False),
    "F": AblationFlags(True, False, True, True, True),
}


@dataclass
class StepResult:
    """Loss tensor to backpropagate plus its float breakdown."""

    loss: Tensor
    breakdown: LossBreakdown
    keep_fraction: float


@dataclass
class ScoringResult:
    """
    Test-time outputs for a batch.

    Attributes:
        anomaly: Pixel maps and image scores
        f_hat: Restored features
        masks: Perception masks (None without the perception head)
        attention: Head-averaged (B, L, L) map per restoration block, if requested
    """

    anomaly: AnomalyMap
    f_hat: Tensor
    masks: MaskFusionResult | None = None
    attention: list[Tensor] = field(default_factory=list)


class RestorationNetwork(nn.Module):
    """Trainable part of the detector: token embedding, perception head, reconstructor."""

    def __init__(
        self,
        channels: int,
        feature_size: int,
        perception: PerceptionConfig,
        reconstructor: ReconstructorConfig,
        flags: AblationFlags,
    ):
        super().__init__()
        if feature_size % perception.patch:
            raise ValueError(f"feature_size {feature_size} is not divisible by patch {perception.patch}")
        self.channels = channels
        self.feature_size = feature_size
        self.perception_config = perception
        self.flags = flags
        self.grid_hw = (feature_size // perception.patch, feature_size // perception.patch)
        num_tokens = self.grid_hw[0] * self.grid_hw[1]

        self.reconstructor = Reconstructor(
            reconstructor,
            channels,
            perception.patch,
            num_tokens=num_tokens,
            use_restoration_attention=flags.use_restoration_attention,
            remove_first_skip=flags.remove_first_skip,
        )
        self.head = PerceptionHead(reconstructor.dim) if flags.use_perception else None
        logger.info(
            f"RestorationNetwork: C_F={channels}, tokens={num_tokens}, "
            f"trainable parameters={self.num_parameters():,}"
        )

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def training_step(self, batch: SynthesisBatch, step_seed: int) -> StepResult:
        """
        Losses for one synthesized batch.

        The perception branch draws one reparameterized sample per branch;
        the keep-mask comes from the analytic moments and carries no gradient.
        """
        tokens_sa = self.reconstructor.tokens(batch.f_input)
        zero = tokens_sa.new_zeros(())

        if self.head is not None:
            tokens_n = self.reconstructor.tokens(batch.f_normal)
            dist_sa = self.head(tokens_sa)
            dist_n = self.head(tokens_n)
            generator = torch.Generator().manual_seed(step_seed)
            eps_sa = torch.randn(dist_sa.u.shape, generator=generator, dtype=dist_sa.u.dtype).to(dist_sa.u.device)
            eps_n = torch.randn(dist_n.u.shape, generator=generator, dtype=dist_n.u.dtype).to(dist_n.u.device)
            l_dis = discriminative_loss(
                sample_scores(dist_sa, eps_sa),
                batch.labels,
                sample_scores(dist_n, eps_n),
                batch.normal_labels,
            )
            l_kl = kl_loss(ScoreDistribution.concat([dist_sa, dist_n]))
            l_aux = auxiliary_loss(l_dis, l_kl, self.perception_config.kl_weight)
            keep = perception_masks(dist_sa, self.perception_config.gamma).m_final
        else:
            l_dis = l_kl = l_aux = zero
            keep = None

        f_hat, _ = self.reconstructor.restore(tokens_sa, keep, self.grid_hw)
        l_mse, l_cos, l_global = reconstruction_terms(batch.f_normal, f_hat)
        l_rec = l_mse + l_cos + l_global
        l_final = joint_loss(l_rec, l_aux)

        breakdown = LossBreakdown(
            l_local_mse=l_mse.item(),
            l_local_cos=l_cos.item(),
            l_global=l_global.item(),
            l_rec=l_rec.item(),
            l_dis=float(l_dis.item()),
            l_kl=float(l_kl.item()),
            l_aux=float(l_aux.item()),
            l_final=l_final.item(),
        )
        keep_fraction = 1.0 if keep is None else keep.mean().item()
        return StepResult(l_final, breakdown, keep_fraction)

    @torch.no_grad()
    def score(
        self,
        f_in: Tensor,
        out_hw: tuple[int, int],
        seed: int = 0,
        return_attention: bool = False,
    ) -> ScoringResult:
        """
        Score features of unmodified test images.

        The keep-mask is built from num_samples score draws seeded by seed;
        no synthesis is involved.
        """
        tokens = self.reconstructor.tokens(f_in)
        masks = None
        keep = None
        if self.head is not None:
            masks = perception_masks(
                self.head(tokens),
                self.perception_config.gamma,
                num_samples=self.perception_config.num_samples,
                seed=seed,
            )
            keep = masks.m_final

        f_hat, maps = self.reconstructor.restore(tokens, keep, self.grid_hw, return_attention)
        attention = [m.mean(dim=1) for m in maps]
        return ScoringResult(anomaly_map(f_in, f_hat, out_hw), f_hat, masks, attention)
