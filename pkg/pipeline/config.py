"""
Run configuration.

A RunConfig is a tree of dataclasses built from a named profile
("toy" or "full"), then overridden by a JSON document, environment
variables (RESTORATION_AD_*, .env supported) and finally CLI flags.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from features.backbone import IMAGENET_MEAN, IMAGENET_STD, BackboneSpec
from model.network import VARIANTS, AblationFlags
from model.perception import PerceptionConfig
from model.restoration import ReconstructorConfig
from synthesis.feature_synthesis import SynthesisConfig

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

ENV_PREFIX = "RESTORATION_AD_"


class DatasetLayout(str, Enum):
    """Directory conventions understood by the dataset loader."""

    MVTEC = "mvtec"
    FLAT = "flat"


@dataclass(frozen=True)
class DatasetConfig:
    """
    Where the images live.

    Attributes:
        root: Dataset root directory
        layout: MVTEC (root/category/train/good ...) or FLAT (root/train ...)
        category: Category subdirectory (MVTEC layout only)
        pixel_eval: Require ground-truth masks for anomalous test images
    """

    root: str = "data/toy"
    layout: DatasetLayout = DatasetLayout.MVTEC
    category: str = "toy"
    pixel_eval: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    """
    AdamW settings and the training budget.

    Attributes:
        lr: Learning rate (constant, no decay)
        weight_decay: Decoupled weight decay
        batch_size: Images per step
        epochs: Epoch budget, used when max_steps is None
        max_steps: Step budget; overrides epochs when set
        grad_clip: Maximum global gradient norm; None disables clipping
    """

    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    epochs: int = 400
    max_steps: int | None = None
    grad_clip: float | None = 1.0


@dataclass
class RunConfig:
    """
    Complete configuration of one run.

    Attributes:
        profile: Name of the profile the run started from
        dataset: Dataset location and layout
        backbone: Frozen backbone and fused levels
        synthesis: Anomaly synthesis settings
        perception: Perception head settings (K, gamma, lambda, M)
        reconstructor: Reconstructor architecture
        optimizer: Optimizer and budget
        ablation: Component switches
        image_size: Square input resolution
        feature_size: Square fused feature resolution
        seed: Run seed; every random draw derives from it
        output_dir: Where checkpoints, logs and results go
        device: torch device string
        log_every: Steps between INFO loss lines
        checkpoint_every: Steps between periodic checkpoints (0 = final only)
        eval_batch_size: Images per scoring batch
    """

    profile: str = "toy"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    reconstructor: ReconstructorConfig = field(default_factory=ReconstructorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    image_size: int = 64
    feature_size: int = 16
    seed: int = 0
    output_dir: str = "runs/toy"
    device: str = "cpu"
    log_every: int = 10
    checkpoint_every: int = 0
    eval_batch_size: int = 8

    def to_dict(self) -> dict[str, Any]:
        return _to_jsonable(asdict(self))

    @classmethod
    def from_dict(cls, document: dict[str, Any]) -> "RunConfig":
        """Rebuild a config from to_dict() output (or any partial override document)."""
        profile = document.get("profile", "toy")
        overrides = {k: v for k, v in document.items() if k != "profile"}
        return apply_overrides(profile_config(profile), overrides)

    def with_variant(self, name: str) -> "RunConfig":
        return replace(self, ablation=AblationFlags.variant(name))

    @property
    def variant(self) -> str | None:
        """Letter of the ablation variant these flags match, if any."""
        for name, flags in VARIANTS.items():
            if flags == self.ablation:
                return name
        return None

    def validate(self, require_dataset: bool = True) -> None:
        """
        Check cross-field invariants.

        Raises:
            FileNotFoundError: If a configured path does not exist.
            ValueError: On out-of-range or inconsistent values.
        """
        if require_dataset and not Path(self.dataset.root).exists():
            raise FileNotFoundError(f"Dataset root not found: {self.dataset.root}")
        if self.backbone.weights_path and not Path(self.backbone.weights_path).exists():
            raise FileNotFoundError(f"Backbone weights not found: {self.backbone.weights_path}")
        if self.synthesis.source_dir and not Path(self.synthesis.source_dir).exists():
            raise FileNotFoundError(f"Anomaly source directory not found: {self.synthesis.source_dir}")

        if self.image_size <= 0 or self.feature_size <= 0:
            raise ValueError(f"image_size and feature_size must be positive ({self.image_size}, {self.feature_size})")
        if self.feature_size % self.perception.patch:
            raise ValueError(
                f"feature_size {self.feature_size} is not divisible by patch {self.perception.patch}"
            )
        if self.optimizer.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.optimizer.lr}")
        if self.optimizer.batch_size <= 0 or self.eval_batch_size <= 0:
            raise ValueError("Batch sizes must be positive")
        if self.optimizer.max_steps is None and self.optimizer.epochs <= 0:
            raise ValueError("Either epochs > 0 or max_steps must be set")
        if self.optimizer.max_steps is not None and self.optimizer.max_steps < 0:
            raise ValueError(f"max_steps must be nonnegative, got {self.optimizer.max_steps}")
        if self.optimizer.grad_clip is not None and self.optimizer.grad_clip <= 0:
            raise ValueError(f"grad_clip must be positive or null, got {self.optimizer.grad_clip}")
        if self.log_every <= 0 or self.checkpoint_every < 0:
            raise ValueError("log_every must be positive and checkpoint_every nonnegative")
        if not 0.0 < self.synthesis.threshold < 1.0:
            raise ValueError(f"Perlin threshold must lie in (0, 1), got {self.synthesis.threshold}")


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def _coerce(current: Any, value: Any) -> Any:
    if isinstance(current, Enum):
        return type(current)(value)
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _override_dataclass(instance: Any, overrides: dict[str, Any], section: str) -> Any:
    known = {f.name for f in fields(instance)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"Unknown configuration keys in '{section}': {unknown}")

    changes = {}
    for key, value in overrides.items():
        current = getattr(instance, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"Configuration section '{section}.{key}' must be an object")
            changes[key] = _override_dataclass(current, value, f"{section}.{key}")
        else:
            changes[key] = _coerce(current, value)
    return replace(instance, **changes)


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """
    Override config key by key with a nested document.

    Raises:
        ValueError: On unknown keys or a malformed section.
    """
    return _override_dataclass(config, overrides, "run")


def profile_config(name: str) -> RunConfig:
    """
    Defaults of a named profile.

    toy: seeded toy backbone, 64 px images, 16x16 features, D=64, 4 heads,
    one block of each kind, 1000-step budget.
    full: wide residual backbone (stages 1-3, 1792 channels), 256 px
    images, 64x64 features, D=768, 12 heads, two blocks of each kind,
    400 epochs.
    """
    if name == "toy":
        return RunConfig(
            profile="toy",
            dataset=DatasetConfig(root="data/toy", category="toy"),
            backbone=BackboneSpec(name="toy", levels=(0, 1, 2), widths=(8, 16, 32)),
            synthesis=SynthesisConfig(),
            perception=PerceptionConfig(patch=4),
            reconstructor=ReconstructorConfig(n_restoration_blocks=1, n_refine_blocks=1, heads=4, dim=64),
            optimizer=OptimizerConfig(batch_size=8, max_steps=1000),
            image_size=64,
            feature_size=16,
            output_dir="runs/toy",
        )
    if name == "full":
        return RunConfig(
            profile="full",
            dataset=DatasetConfig(root="data/mvtec", category="bottle"),
            backbone=BackboneSpec(
                name="wide_resnet50_2", levels=(0, 1, 2), mean=IMAGENET_MEAN, std=IMAGENET_STD
            ),
            synthesis=SynthesisConfig(),
            perception=PerceptionConfig(patch=4),
            reconstructor=ReconstructorConfig(),
            optimizer=OptimizerConfig(batch_size=8, epochs=400),
            image_size=256,
            feature_size=64,
            output_dir="runs/full",
            log_every=50,
        )
    raise ValueError(f"Unknown profile '{name}'. Expected 'toy' or 'full'")


def apply_env(config: RunConfig) -> RunConfig:
    """Apply RESTORATION_AD_DEVICE / _BACKBONE_WEIGHTS / _SOURCE_DIR when set."""
    device = os.getenv(f"{ENV_PREFIX}DEVICE")
    weights = os.getenv(f"{ENV_PREFIX}BACKBONE_WEIGHTS")
    source_dir = os.getenv(f"{ENV_PREFIX}SOURCE_DIR")
    if device:
        config = replace(config, device=device)
    if weights:
        config = replace(config, backbone=replace(config.backbone, weights_path=weights))
    if source_dir:
        config = replace(config, synthesis=replace(config.synthesis, source_dir=source_dir))
    return config


def load_config(
    path: str | Path | None = None,
    profile: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """
    Build the effective RunConfig.

    Precedence, lowest first: profile defaults, JSON document at path,
    environment variables, explicit overrides (CLI flags).

    Raises:
        FileNotFoundError: If path does not exist.
        ValueError: On unknown keys or an unknown profile.
    """
    document: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
        logger.info(f"Loaded configuration document {path}")

    name = profile or document.get("profile", "toy")
    config = profile_config(name)
    config = apply_overrides(config, {k: v for k, v in document.items() if k != "profile"})
    config = apply_env(config)
    if overrides:
        config = apply_overrides(config, overrides)
    logger.debug(f"Effective configuration: {json.dumps(config.to_dict())}")
    return config
