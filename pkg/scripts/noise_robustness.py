"""
Speckle-noise robustness sweep.

Scores every test image of a dataset after replacing a fraction p of its
pixels with random colours, for a sweep of p, and writes one row per
(p, image) plus the image AUROC per p.

Usage:
    python scripts/noise_robustness.py --checkpoint runs/toy/checkpoint.pt
    python scripts/noise_robustness.py --checkpoint runs/toy/checkpoint.pt --levels 0 0.05 0.1 0.2
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from evaluation.metrics import ScoredSet, auroc  # noqa: E402
from pipeline.dataset import load_dataset  # noqa: E402
from pipeline.inference import Detector  # noqa: E402
from reports.exporter import ReportExporter  # noqa: E402
from synthesis.augment import speckle_noise  # noqa: E402
from synthesis.sources import load_image  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-8s | %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.0, 0.01, 0.02, 0.05, 0.1)


def sweep(detector: Detector, paths: list[str], labels: list[int], levels: list[float]) -> pd.DataFrame:
    """Image scores for every noise level and image."""
    size = detector.config.image_size
    clean = [load_image(p, size) for p in paths]
    rows = []
    for p in levels:
        for i, (path, label, image) in enumerate(zip(paths, labels, clean)):
            noisy = speckle_noise(image, p, seed=i)
            score = float(detector.score(noisy.unsqueeze(0)).anomaly.image_score[0])
            rows.append({"p": p, "path": path, "score": score, "label": label})
        logger.info(f"[OK] p={p:.3f} | {len(paths)} images scored")
    return pd.DataFrame(rows)


def main() -> int:
    parser = argparse.ArgumentParser(description="Speckle-noise robustness sweep")
    parser.add_argument("--checkpoint", required=True, help="Trained checkpoint")
    parser.add_argument("--levels", nargs="+", type=float, default=list(DEFAULT_LEVELS), help="Noise probabilities")
    parser.add_argument("--out", default=None, help="Output directory (default: next to the checkpoint)")
    args = parser.parse_args()

    logger.info("=" * 60)
    logger.info("Speckle-noise robustness sweep")
    logger.info("=" * 60)

    detector = Detector.from_checkpoint(args.checkpoint)
    dataset = detector.config.dataset
    index = load_dataset(dataset.root, dataset.layout, dataset.category, pixel_eval=False)
    test = index.test

    with torch.no_grad():
        table = sweep(detector, list(test["path"]), list(test["label"]), args.levels)

    summary = pd.DataFrame(
        [
            {"p": p, "image_auroc": auroc(ScoredSet(group["score"].to_numpy(), group["label"].to_numpy()))}
            for p, group in table.groupby("p", sort=True)
        ]
    )
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "noise_robustness"
    exporter = ReportExporter(out_dir)
    exporter.export_table(table, "noise_scores.csv")
    exporter.export_table(summary, "noise_auroc.csv")

    logger.info("-" * 60)
    for _, row in summary.iterrows():
        logger.info(f"p={row['p']:.3f} | image AUROC {row['image_auroc']:.4f}")
    logger.info("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
