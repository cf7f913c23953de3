"""
Training loop and checkpoints.

Every random draw of step s (batch order, augmentation, Perlin masks,
source picks, score noise) derives from (run seed, s), so a run resumed
from a checkpoint continues on the same trajectory as an uninterrupted one.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
from PIL import Image
from torch.nn.utils import clip_grad_norm_

from features.backbone import FeatureExtractor
from model.network import RestorationNetwork
from model.objectives import LossBreakdown
from pipeline.config import RunConfig
from pipeline.dataset import DatasetIndex, ImageSet, load_dataset
from reports.exporter import StepLogWriter
from synthesis.feature_synthesis import AnomalySynthesizer, SynthesisMode
from synthesis.sources import AnomalySourceBank

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.pt"
STEP_LOG_NAME = "train_log.jsonl"
NAN_DUMP_NAME = "nan_dump.json"


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a NaN or infinite loss."""


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit seed for (seed, *keys)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def resolve_device(name: str) -> torch.device:
    if name.startswith("cuda") and not torch.cuda.is_available():
        logger.warning(f"Device '{name}' requested but CUDA is unavailable; using cpu")
        return torch.device("cpu")
    return torch.device(name)


def build_network(config: RunConfig, channels: int) -> RestorationNetwork:
    torch.manual_seed(config.seed)
    return RestorationNetwork(
        channels,
        config.feature_size,
        config.perception,
        config.reconstructor,
        config.ablation,
    )


@dataclass
class Checkpoint:
    """
    Everything needed to resume training or score images.

    Attributes:
        format_version: Payload layout version
        model_state: Network state dict
        optimizer_state: Optimizer state dict (None for scoring-only use)
        config: RunConfig.to_dict() snapshot
        step: Completed optimizer steps
        epoch: Completed epochs
        rng_state: Global torch RNG state at save time
    """

    format_version: int
    model_state: dict[str, Any]
    optimizer_state: dict[str, Any] | None
    config: dict[str, Any]
    step: int
    epoch: int
    rng_state: dict[str, Any]

    @property
    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def save_checkpoint(
    path: str | Path,
    network: RestorationNetwork,
    optimizer: torch.optim.Optimizer | None,
    config: RunConfig,
    step: int,
    epoch: int,
) -> Path:
    """Write a versioned checkpoint with torch.save."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_state": network.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "config": config.to_dict(),
        "step": step,
        "epoch": epoch,
        "rng_state": {"torch": torch.get_rng_state()},
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint saved to {path} (step {step}, epoch {epoch})")
    return path


def load_checkpoint(path: str | Path, map_location: str | torch.device = "cpu") -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        FileNotFoundError: If path does not exist.
        ValueError: If the format version differs from CHECKPOINT_VERSION.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location=map_location, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"Checkpoint {path} has format version {version}, expected {CHECKPOINT_VERSION}")
    return Checkpoint(**payload)


def restore_network(checkpoint: Checkpoint, device: str | torch.device = "cpu") -> tuple[RunConfig, RestorationNetwork]:
    """Rebuild the network of a checkpoint with its weights loaded."""
    config = checkpoint.run_config
    extractor = FeatureExtractor(config.backbone, config.feature_size)
    network = build_network(config, extractor.channels)
    network.load_state_dict(checkpoint.model_state)
    network.to(device)
    network.eval()
    return config, network


class Trainer:
    """
    Trains a RestorationNetwork on the normal images of a dataset.

    Usage:
        trainer = Trainer(config)
        checkpoint_path = trainer.fit()
    """

    def __init__(self, config: RunConfig, index: DatasetIndex | None = None):
        config.validate(require_dataset=index is None)
        self.config = config
        self.device = resolve_device(config.device)
        self.output_dir = Path(config.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

        self.index = index or load_dataset(
            config.dataset.root, config.dataset.layout, config.dataset.category, config.dataset.pixel_eval
        )
        self.images = ImageSet(list(self.index.train["path"]), config.image_size)

        self.extractor = FeatureExtractor(config.backbone, config.feature_size).to(self.device)
        mode = config.ablation.synthesis_mode
        sources = None
        if mode != SynthesisMode.NONE:
            sources = AnomalySourceBank(
                config.image_size,
                config.synthesis.source_dir,
                config.synthesis.n_procedural_sources,
                seed=config.seed,
            )
        self.synthesizer = AnomalySynthesizer(
            self.extractor, sources, config.synthesis, config.perception.patch, mode
        )

        self.network = build_network(config, self.extractor.channels).to(self.device)
        self.optimizer = torch.optim.AdamW(
            self.network.parameters(),
            lr=config.optimizer.lr,
            weight_decay=config.optimizer.weight_decay,
        )
        self.step = 0
        self.epoch = 0
        self._last_step_seed: int | None = None
        self._last_keep_fraction = 1.0
        self._last_grad_norm = 0.0

    @classmethod
    def resume(cls, checkpoint_path: str | Path, index: DatasetIndex | None = None) -> "Trainer":
        """Continue a run from a checkpoint; the checkpoint's config is used as-is."""
        checkpoint = load_checkpoint(checkpoint_path)
        trainer = cls(checkpoint.run_config, index)
        trainer.network.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            trainer.optimizer.load_state_dict(checkpoint.optimizer_state)
        trainer.step = checkpoint.step
        trainer.epoch = checkpoint.epoch
        torch.set_rng_state(checkpoint.rng_state["torch"])
        logger.info(f"Resumed from {checkpoint_path} at step {trainer.step}")
        return trainer

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.images) / self.config.optimizer.batch_size)

    @property
    def total_steps(self) -> int:
        if self.config.optimizer.max_steps is not None:
            return self.config.optimizer.max_steps
        return self.config.optimizer.epochs * self.steps_per_epoch

    def batch_indices(self, step: int) -> np.ndarray:
        """Training-image indices of a step: a seeded per-epoch permutation, chunked."""
        epoch, position = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng(derive_seed(self.config.seed, epoch, 1)).permutation(len(self.images))
        size = self.config.optimizer.batch_size
        return order[position * size:(position + 1) * size]

    def train_step(self) -> LossBreakdown:
        """
        Run one optimizer step.

        Raises:
            TrainingDivergedError: If any loss term is NaN or infinite.
        """
        step_seed = derive_seed(self.config.seed, self.step)
        indices = self.batch_indices(self.step)
        images = self.images.batch(indices).to(self.device)

        self.network.train()
        batch = self.synthesizer(images, step_seed)
        result = self.network.training_step(batch, step_seed)

        if not result.breakdown.is_finite():
            self._dump_divergence(step_seed, indices, result.breakdown)
            raise TrainingDivergedError(
                f"Non-finite loss at step {self.step} (step seed {step_seed}): {result.breakdown.to_dict()}"
            )

        self.optimizer.zero_grad(set_to_none=True)
        result.loss.backward()
        max_norm = self.config.optimizer.grad_clip
        grad_norm = clip_grad_norm_(self.network.parameters(), float("inf") if max_norm is None else max_norm)
        self.optimizer.step()

        self.step += 1
        self.epoch = self.step // self.steps_per_epoch
        self._last_keep_fraction = result.keep_fraction
        self._last_grad_norm = float(grad_norm)
        self._last_step_seed = step_seed
        return result.breakdown

    def _dump_divergence(self, step_seed: int, indices: np.ndarray, breakdown: LossBreakdown) -> None:
        dump = {
            "step": self.step,
            "epoch": self.epoch,
            "step_seed": step_seed,
            "batch_indices": [int(i) for i in indices],
            "batch_paths": [self.images.paths[int(i)] for i in indices],
            "losses": breakdown.to_dict(),
        }
        path = self.output_dir / NAN_DUMP_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dump, f, indent=2)
        logger.error(f"Training diverged at step {self.step}; diagnostic dump written to {path}")

    def save(self, path: str | Path | None = None) -> Path:
        return save_checkpoint(
            path or self.output_dir / CHECKPOINT_NAME,
            self.network,
            self.optimizer,
            self.config,
            self.step,
            self.epoch,
        )

    def fit(self, steps: int | None = None) -> Path:
        """
        Train until total_steps (or for `steps` more steps) and save a checkpoint.

        Returns:
            Path of the final checkpoint.
        """
        target = self.total_steps if steps is None else self.step + steps
        logger.info("=" * 60)
        logger.info(
            f"Training variant {self.config.variant or 'custom'} on {self.index.category}: "
            f"steps {self.step} -> {target}, batch {self.config.optimizer.batch_size}"
        )
        logger.info("=" * 60)

        with StepLogWriter(self.output_dir / STEP_LOG_NAME) as step_log:
            while self.step < target:
                breakdown = self.train_step()
                step_log.write(
                    {
                        "step": self.step,
                        "epoch": self.epoch,
                        "step_seed": self._last_step_seed,
                        "lr": self.optimizer.param_groups[0]["lr"],
                        "keep_fraction": self._last_keep_fraction,
                        "grad_norm": self._last_grad_norm,
                        **breakdown.to_dict(),
                    }
                )
                if self.step % self.config.log_every == 0 or self.step == target:
                    logger.info(
                        f"step {self.step}/{target} | L_final {breakdown.l_final:.4f} | "
                        f"L_rec {breakdown.l_rec:.4f} | L_aux {breakdown.l_aux:.4f}"
                    )
                every = self.config.checkpoint_every
                if every and self.step % every == 0 and self.step < target:
                    self.save(self.output_dir / f"checkpoint_step{self.step:06d}.pt")

        path = self.save()
        logger.info("=" * 60)
        logger.info(f"Training complete at step {self.step}")
        logger.info("=" * 60)
        return path

    def dump_synthesis(self, count: int, out_dir: str | Path) -> list[Path]:
        """
        Write synthesized samples for inspection.

        For each sample: the Perlin mask as PNG, the token ground truth
        and the per-position squared difference between F_n and F_sa.
        """
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for sample in range(count):
            step_seed = derive_seed(self.config.seed, sample, 7)
            indices = np.array([sample % len(self.images)])
            batch = self.synthesizer(self.images.batch(indices).to(self.device), step_seed)
            mask = batch.masks[0].cpu().numpy().astype(np.uint8)
            diff = (batch.f_input[0] - batch.f_normal[0]).pow(2).sum(dim=0).cpu().numpy()

            stem = out_dir / f"sample_{sample:03d}"
            Image.fromarray(mask * 255).save(f"{stem}_mask.png")
            np.save(f"{stem}_tokens.npy", batch.labels[0].cpu().numpy())
            np.save(f"{stem}_feature_diff.npy", diff)
            plt.imsave(f"{stem}_feature_diff.png", diff, cmap="jet")
            written.append(Path(f"{stem}_mask.png"))
            logger.debug(f"Synthesis sample {sample}: {mask.mean():.3f} masked, step seed {step_seed}")
        logger.info(f"Wrote {count} synthesis samples to {out_dir}")
        return written


def train(config: RunConfig, index: DatasetIndex | None = None) -> Path:
    """Train from scratch with config and return the checkpoint path."""
    return Trainer(config, index).fit()
