"""
Ablation ladder: train and evaluate variants A-F with shared seeds.
"""

import logging
from dataclasses import replace
from pathlib import Path

import pandas as pd

from model.network import VARIANTS
from pipeline.config import RunConfig
from pipeline.dataset import DatasetIndex, load_dataset
from pipeline.inference import Detector, evaluate
from pipeline.trainer import Trainer
from reports.exporter import ReportExporter

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = [
    "variant",
    "seed",
    "use_feature_synthesis",
    "use_image_synthesis",
    "use_perception",
    "use_restoration_attention",
    "remove_first_skip",
    "image_auroc",
    "pixel_auroc",
]


def run_ablation(
    config: RunConfig,
    variants: list[str] | None = None,
    seeds: list[int] | None = None,
    index: DatasetIndex | None = None,
) -> pd.DataFrame:
    """
    Train and evaluate every (variant, seed) pair.

    Each run writes under <output_dir>/ablation/<variant>/seed<seed>.
    The per-run table and a per-variant mean table are written to
    <output_dir>/ablation.

    Returns:
        One row per (variant, seed) with the flags and both AUROCs.
    """
    variants = [v.upper() for v in (variants or sorted(VARIANTS))]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"Unknown variants {unknown}. Expected a subset of {sorted(VARIANTS)}")
    seeds = seeds or [config.seed]
    index = index or load_dataset(
        config.dataset.root, config.dataset.layout, config.dataset.category, config.dataset.pixel_eval
    )
    base_dir = Path(config.output_dir) / "ablation"

    logger.info("=" * 60)
    logger.info(f"Ablation over variants {variants} x seeds {seeds}")
    logger.info("=" * 60)

    rows = []
    for variant in variants:
        for seed in seeds:
            run_dir = base_dir / variant / f"seed{seed}"
            run_config = replace(config.with_variant(variant), seed=seed, output_dir=str(run_dir))
            logger.info("-" * 60)
            logger.info(f"Variant {variant}, seed {seed}")
            logger.info("-" * 60)

            checkpoint = Trainer(run_config, index).fit()
            results = evaluate(Detector.from_checkpoint(checkpoint), index, run_dir)
            rows.append(
                {
                    "variant": variant,
                    "seed": seed,
                    **run_config.ablation.to_dict(),
                    "image_auroc": results["image_auroc"],
                    "pixel_auroc": results["pixel_auroc"],
                }
            )

    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    exporter = ReportExporter(base_dir)
    exporter.export_table(table, "ablation_runs.csv")
    exporter.export_table(summarize_ablation(table), "ablation.csv")
    return table


def summarize_ablation(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and population std of both AUROCs per variant over seeds."""
    metrics = ["image_auroc", "pixel_auroc"]
    grouped = table.groupby("variant", sort=True)[metrics]
    summary = pd.concat([grouped.mean().add_suffix("_mean"), grouped.std(ddof=0).add_suffix("_std")], axis=1)
    return summary[[f"{metric}_{stat}" for metric in metrics for stat in ("mean", "std")]].reset_index()
