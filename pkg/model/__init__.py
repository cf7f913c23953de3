"""
Model module: perception head, restoration reconstructor, objectives
and the assembled restoration network.
"""

from .network import VARIANTS, AblationFlags, RestorationNetwork, ScoringResult, StepResult
from .objectives import (
    AnomalyMap,
    LossBreakdown,
    anomaly_map,
    global_cos_loss,
    joint_loss,
    local_cos_loss,
    local_mse_loss,
    reconstruction_loss,
)
from .perception import (
    KeepDirection,
    MaskFusionResult,
    PatchEmbed,
    PerceptionConfig,
    PerceptionHead,
    ScoreDistribution,
    auxiliary_loss,
    binarize,
    discriminative_loss,
    draw_score_samples,
    embed_tokens,
    estimate_mean_uncertainty,
    fuse_masks,
    kl_loss,
    perception_masks,
    predict_distribution,
    sample_scores,
)
from .restoration import (
    Reconstructor,
    ReconstructorConfig,
    RestorationAttention,
    RestorationBlock,
    SelfAttention,
    TransformerBlock,
    Unembed,
    reconstruct,
    refine_decoder,
)

__all__ = [
    "AblationFlags",
    "AnomalyMap",
    "KeepDirection",
    "LossBreakdown",
    "MaskFusionResult",
    "PatchEmbed",
    "PerceptionConfig",
    "PerceptionHead",
    "Reconstructor",
    "ReconstructorConfig",
    "RestorationAttention",
    "RestorationBlock",
    "RestorationNetwork",
    "ScoreDistribution",
    "ScoringResult",
    "SelfAttention",
    "StepResult",
    "TransformerBlock",
    "Unembed",
    "VARIANTS",
    "anomaly_map",
    "auxiliary_loss",
    "binarize",
    "discriminative_loss",
    "draw_score_samples",
    "embed_tokens",
    "estimate_mean_uncertainty",
    "fuse_masks",
    "global_cos_loss",
    "joint_loss",
    "kl_loss",
    "local_cos_loss",
    "local_mse_loss",
    "perception_masks",
    "predict_distribution",
    "reconstruct",
    "reconstruction_loss",
    "refine_decoder",
    "sample_scores",
]
