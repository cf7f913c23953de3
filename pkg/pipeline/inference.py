"""
Evaluation and inference.

Test images go straight through the frozen backbone and the network;
no anomaly synthesis is involved on these paths.
"""

import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from evaluation.metrics import (
    DECISION_RULE,
    AurocAccumulator,
    ScoredSet,
    UndefinedMetricError,
    acc_f1,
    auroc,
    optimal_f1_threshold,
)
from features.backbone import FeatureExtractor
from model.network import RestorationNetwork, ScoringResult
from pipeline.config import RunConfig
from pipeline.dataset import NORMAL_DEFECT, DatasetIndex, load_mask
from pipeline.trainer import load_checkpoint, resolve_device, restore_network
from reports.exporter import ReportExporter
from synthesis.sources import load_image

logger = logging.getLogger(__name__)


class Detector:
    """
    A trained network plus its feature extractor, ready to score images.

    Usage:
        detector = Detector.from_checkpoint("runs/toy/checkpoint.pt")
        result = detector.score(images)
    """

    def __init__(self, config: RunConfig, network: RestorationNetwork, device: str | torch.device = "cpu"):
        self.config = config
        self.device = torch.device(device)
        self.network = network.to(self.device).eval()
        self.extractor = FeatureExtractor(config.backbone, config.feature_size).to(self.device)
        self.checkpoint_path: Path | None = None

    @classmethod
    def from_checkpoint(cls, path: str | Path, device: str | None = None) -> "Detector":
        checkpoint = load_checkpoint(path)
        config = checkpoint.run_config
        target = resolve_device(device or config.device)
        _, network = restore_network(checkpoint, target)
        detector = cls(config, network, target)
        detector.checkpoint_path = Path(path)
        logger.info(f"Detector loaded from {path} (step {checkpoint.step})")
        return detector

    def score(
        self,
        images: Tensor,
        out_hw: tuple[int, int] | None = None,
        return_attention: bool = False,
    ) -> ScoringResult:
        """
        Score a (B, 3, H, W) batch in [0, 1] at the configured image size.

        Args:
            images: Input batch.
            out_hw: Resolution of the returned pixel maps (default: input size).
            return_attention: Also return head-averaged restoration attention.
        """
        images = images.to(self.device)
        features = self.extractor(images)
        out_hw = out_hw or tuple(images.shape[-2:])
        return self.network.score(features, out_hw, seed=self.config.seed, return_attention=return_attention)

    def score_bytes(self, data: bytes) -> ScoringResult:
        """Score one encoded image (PNG, JPEG, ...) held in memory; nothing touches disk."""
        return self.score(load_image(io.BytesIO(data), self.config.image_size).unsqueeze(0))


def _per_defect_auroc(frame: pd.DataFrame) -> dict[str, float]:
    normal = frame[frame["defect"] == NORMAL_DEFECT]
    breakdown = {}
    for defect in sorted(set(frame["defect"]) - {NORMAL_DEFECT}):
        subset = pd.concat([normal, frame[frame["defect"] == defect]])
        try:
            breakdown[defect] = auroc(ScoredSet(subset["score"].to_numpy(), subset["label"].to_numpy()))
        except UndefinedMetricError:
            logger.debug(f"Skipping per-defect AUROC for '{defect}': single class")
    return breakdown


def evaluate(
    detector: Detector,
    index: DatasetIndex,
    out_dir: str | Path | None = None,
) -> dict[str, Any]:
    """
    Score every test image and compute the results document.

    The document holds image AUROC, pixel AUROC (when masks exist), the
    optimal-F1 threshold with F1 and ACC at it, and image AUROC per defect
    type. Per-image scores go to scores.csv; parameter count and seconds
    per image go to complexity.json so results.json stays reproducible.

    Raises:
        UndefinedMetricError: If the test split holds a single class.
    """
    config = detector.config
    test = index.test
    size = config.image_size
    pixel_accumulator = AurocAccumulator() if index.has_masks else None

    logger.info("=" * 60)
    logger.info(f"Evaluating on {len(test)} test images of '{index.category}'")
    logger.info("=" * 60)

    scores: list[float] = []
    elapsed = 0.0
    for start in range(0, len(test), config.eval_batch_size):
        chunk = test.iloc[start:start + config.eval_batch_size]
        images = torch.stack([load_image(p, size) for p in chunk["path"]])
        began = time.perf_counter()
        result = detector.score(images)
        elapsed += time.perf_counter() - began

        scores.extend(result.anomaly.image_score.cpu().double().tolist())
        if pixel_accumulator is not None:
            maps = result.anomaly.pixel_scores.cpu().double().numpy()
            for pixel_map, mask_path in zip(maps, chunk["mask_path"]):
                pixel_accumulator.update(pixel_map.ravel(), load_mask(mask_path, size).ravel())
        logger.debug(f"Scored images {start}-{start + len(chunk) - 1}")

    frame = test.assign(score=scores)
    image_set = ScoredSet(frame["score"].to_numpy(), frame["label"].to_numpy())
    threshold, _ = optimal_f1_threshold(image_set)
    acc, f1 = acc_f1(image_set, threshold)

    pixel_auroc = None
    if pixel_accumulator is not None:
        try:
            pixel_auroc = pixel_accumulator.compute()
        except UndefinedMetricError as e:
            logger.warning(f"Pixel AUROC undefined: {e}")

    results = {
        "category": index.category,
        "variant": config.variant,
        "seed": config.seed,
        "image_auroc": auroc(image_set),
        "pixel_auroc": pixel_auroc,
        "f1": f1,
        "acc": acc,
        "threshold": threshold,
        "decision_rule": DECISION_RULE,
        "num_test_images": len(frame),
        "per_defect_image_auroc": _per_defect_auroc(frame),
    }
    complexity = {
        "num_parameters": detector.network.num_parameters(),
        "seconds_per_image": elapsed / max(len(frame), 1),
        "device": str(detector.device),
    }

    pixel_text = f"{pixel_auroc:.4f}" if pixel_auroc is not None else "n/a"
    logger.info(
        f"Image AUROC {results['image_auroc']:.4f} | pixel AUROC {pixel_text} | "
        f"F1 {f1:.4f} | ACC {acc:.4f} @ threshold {threshold:.6g}"
    )

    if out_dir is not None:
        exporter = ReportExporter(out_dir)
        exporter.export_json(results, "results.json")
        exporter.export_json(complexity, "complexity.json")
        exporter.export_html(results, "results.html", complexity)
        exporter.export_score_table(frame[["path", "score", "label"]], "scores.csv")
    return results


@dataclass
class InferenceReport:
    """Outcome of an infer run: written artifacts and skipped inputs."""

    rows: list[dict[str, Any]] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def _read_for_inference(path: Path, size: int) -> tuple[Tensor, tuple[int, int]]:
    with Image.open(path) as img:
        original_hw = (img.height, img.width)
    return load_image(path, size), original_hw


def _artifact_name(stem: str, used: set[str]) -> str:
    name, k = stem, 0
    while name in used:
        k += 1
        name = f"{stem}_{k}"
    used.add(name)
    return name


def infer(
    detector: Detector,
    image_paths: list[str | Path],
    out_dir: str | Path,
    save_attention: bool = False,
) -> InferenceReport:
    """
    Score individual images and write their artifacts.

    Per image: <name>_heatmap.png (input resolution), <name>_scores.npy
    (raw pixel scores) and a row in scores.csv; with save_attention also
    <name>_attention.npy (head-averaged restoration attention, one map
    per restoration block). <name> is the file stem, suffixed _1, _2, ...
    when an earlier input in the run had the same stem, and is recorded in
    the row's artifact column. Unreadable images are skipped with a warning.
    """
    out_dir = Path(out_dir)
    exporter = ReportExporter(out_dir)
    report = InferenceReport()
    used_names: set[str] = set()

    for raw_path in image_paths:
        path = Path(raw_path)
        try:
            image, original_hw = _read_for_inference(path, detector.config.image_size)
        except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
            logger.warning(f"Skipping unreadable image {path}: {e}")
            report.failed.append(str(path))
            continue

        result = detector.score(image.unsqueeze(0), out_hw=original_hw, return_attention=save_attention)
        pixel_scores = result.anomaly.pixel_scores[0].cpu().numpy()
        score = float(result.anomaly.image_score[0])
        name = _artifact_name(path.stem, used_names)

        np.save(out_dir / f"{name}_scores.npy", pixel_scores)
        plt.imsave(out_dir / f"{name}_heatmap.png", pixel_scores, cmap="jet")
        if save_attention and result.attention:
            attention = np.stack([a[0].cpu().numpy() for a in result.attention])
            np.save(out_dir / f"{name}_attention.npy", attention)

        row = {"path": str(path), "score": score, "label": None, "artifact": name}
        report.rows.append(row)
        exporter.export_score_table([row], "scores.csv", append=True)
        logger.info(f"{path.name}: score {score:.6g}")

    if report.failed:
        logger.warning(f"{len(report.failed)} of {len(image_paths)} images could not be read")
    return report
