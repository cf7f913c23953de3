"""
Restoration Anomaly Detector - Main Entry Point

Trains and evaluates a feature-restoration anomaly detector:
1. Index a dataset of normal training images (or generate a toy one)
2. Train the restoration network on synthesized feature-level anomalies
3. Evaluate image/pixel AUROC, F1 and ACC, or score individual images
4. Compare ablation variants A-F

Usage:
    python main.py gen-toy --out data/toy
    python main.py train --config configs/toy.json --seed 0
    python main.py eval --out runs/toy
    python main.py infer --out runs/toy/infer image1.png image2.png
    python main.py synthesize --out runs/toy/synthesis
    python main.py ablate --seeds 0 1 2 3 4

Example:
    python main.py train --profile full --category bottle --device cuda
    python main.py eval --checkpoint runs/full/checkpoint.pt --category bottle
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from evaluation.metrics import UndefinedMetricError
from pipeline import (
    Detector,
    Trainer,
    evaluate,
    generate_toy_dataset,
    infer,
    load_config,
    load_dataset,
    run_ablation,
    summarize_ablation,
)
from pipeline.trainer import CHECKPOINT_NAME, TrainingDivergedError

COMMANDS = ("train", "eval", "infer", "synthesize", "ablate", "gen-toy")


def setup_logging(verbose: bool = False) -> None:
    """
    Configure logging for the application.

    Args:
        verbose: If True, set DEBUG level; otherwise INFO.
    """
    level = logging.DEBUG if verbose else logging.INFO

    formatter = logging.Formatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)-20s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)

    # Set encoding for Windows compatibility
    if hasattr(sys.stdout, "reconfigure"):
        try:
            sys.stdout.reconfigure(encoding="utf-8", errors="replace")
        except Exception:
            pass

    root_logger.addHandler(console_handler)

    # third-party chatter
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """
    Parse command line arguments.

    Returns:
        Parsed arguments namespace.
    """
    parser = argparse.ArgumentParser(
        description="Restoration Anomaly Detector - unsupervised anomaly detection by feature restoration",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the toy dataset and train the full model on it
  python main.py gen-toy --out data/toy
  python main.py train --config configs/toy.json

  # Evaluate the run's checkpoint on its test split
  python main.py eval --out runs/toy

  # Score images and write heatmaps
  python main.py infer --out runs/toy/infer --attention data/toy/toy/test/patch/000.png

  # Ablation ladder over five seeds
  python main.py ablate --variants A C D E F --seeds 0 1 2 3 4
        """,
    )
    parser.add_argument("command", choices=COMMANDS, help="What to do")
    parser.add_argument("images", nargs="*", help="Image paths (infer only)")

    parser.add_argument("--config", type=str, default=None, help="JSON configuration document")
    parser.add_argument("--profile", type=str, choices=["toy", "full"], default=None, help="Base profile")
    parser.add_argument("--seed", type=int, default=None, help="Run seed")
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--category", type=str, default=None, help="Dataset category")
    parser.add_argument("--variant", type=str, choices=list("ABCDEF"), default=None, help="Ablation variant")
    parser.add_argument("--device", type=str, default=None, help="torch device (cpu, cuda, cuda:1)")
    parser.add_argument("--checkpoint", type=str, default=None, help="Checkpoint file (eval, infer)")
    parser.add_argument("--resume", action="store_true", help="Resume training from --checkpoint")
    parser.add_argument("--steps", type=int, default=None, help="Override the training step budget")
    parser.add_argument("--attention", action="store_true", help="Save restoration attention maps (infer)")
    parser.add_argument("--count", type=int, default=8, help="Samples to dump (synthesize)")
    parser.add_argument("--variants", nargs="+", default=None, help="Variants to compare (ablate)")
    parser.add_argument("--seeds", nargs="+", type=int, default=None, help="Seeds to average over (ablate)")
    parser.add_argument("--n-train", type=int, default=32, help="Training images (gen-toy)")
    parser.add_argument("--n-test", type=int, default=16, help="Normal and anomalous test images each (gen-toy)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging (DEBUG level)")

    return parser.parse_intermixed_args(argv)


def cli_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """CLI flags as a configuration override document."""
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None and args.command in ("train", "ablate"):
        overrides["output_dir"] = args.out
    if args.category is not None:
        overrides["dataset"] = {"category": args.category}
    if args.device is not None:
        overrides["device"] = args.device
    if args.steps is not None:
        overrides["optimizer"] = {"max_steps": args.steps}
    return overrides


def resolve_checkpoint(args: argparse.Namespace, output_dir: str) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(output_dir) / CHECKPOINT_NAME


def run(args: argparse.Namespace) -> int:
    """
    Dispatch a parsed command.

    Returns:
        Exit code (0 for success, 1 for failure).
    """
    logger = logging.getLogger(__name__)

    if args.command == "gen-toy":
        out = args.out or "data/toy"
        index = generate_toy_dataset(out, args.n_train, args.n_test, seed=args.seed or 0, category=args.category or "toy")
        print(f"Toy dataset written to {out}: {len(index.train)} train, {len(index.test)} test images")
        return 0

    config = load_config(args.config, args.profile, cli_overrides(args))
    if args.variant:
        config = config.with_variant(args.variant)

    logger.info("=" * 60)
    logger.info(f"RESTORATION ANOMALY DETECTOR - {args.command} (profile {config.profile}, seed {config.seed})")
    logger.info("=" * 60)

    if args.command == "train":
        if args.resume:
            trainer = Trainer.resume(resolve_checkpoint(args, config.output_dir))
        else:
            trainer = Trainer(config)
        path = trainer.fit()
        print(f"\nCheckpoint: {path}")
        return 0

    if args.command == "eval":
        checkpoint = resolve_checkpoint(args, config.output_dir)
        detector = Detector.from_checkpoint(checkpoint, args.device)
        dataset = detector.config.dataset
        index = load_dataset(dataset.root, dataset.layout, args.category or dataset.category, dataset.pixel_eval)
        out_dir = args.out or checkpoint.parent
        results = evaluate(detector, index, out_dir)

        print("\n" + "=" * 60)
        print(f"RESULTS - {results['category']} (variant {results['variant'] or 'custom'})")
        print("=" * 60)
        print(f"  Image AUROC: {results['image_auroc']:.4f}")
        if results["pixel_auroc"] is not None:
            print(f"  Pixel AUROC: {results['pixel_auroc']:.4f}")
        print(f"  F1:          {results['f1']:.4f}")
        print(f"  ACC:         {results['acc']:.4f}")
        for defect, value in results["per_defect_image_auroc"].items():
            print(f"    {defect}: {value:.4f}")
        print(f"\nResults saved to: {out_dir}")
        return 0

    if args.command == "infer":
        if not args.images:
            logger.error("infer needs at least one image path")
            return 1
        checkpoint = resolve_checkpoint(args, config.output_dir)
        detector = Detector.from_checkpoint(checkpoint, args.device)
        out_dir = args.out or checkpoint.parent / "infer"
        report = infer(detector, args.images, out_dir, save_attention=args.attention)
        print(f"\nScored {len(report.rows)} image(s); artifacts in {out_dir}")
        return 0 if report.ok else 1

    if args.command == "synthesize":
        trainer = Trainer(config)
        out_dir = args.out or Path(config.output_dir) / "synthesis"
        trainer.dump_synthesis(args.count, out_dir)
        print(f"\n{args.count} synthesis samples written to {out_dir}")
        return 0

    if args.command == "ablate":
        table = run_ablation(config, args.variants, args.seeds)
        print("\n" + summarize_ablation(table).to_string(index=False))
        return 0

    logger.error(f"Unknown command: {args.command}")
    return 1


def main(argv: list[str] | None = None) -> int:
    """
    Main entry point.

    Returns:
        Exit code (0 for success, 1 for failure).
    """
    args = parse_args(argv)
    setup_logging(args.verbose)
    logger = logging.getLogger(__name__)

    try:
        return run(args)

    except FileNotFoundError as e:
        logger.error(f"File not found: {e}")
        return 1
    except UndefinedMetricError as e:
        logger.error(f"Metric undefined: {e}")
        return 1
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    except KeyError as e:
        logger.error(f"Unknown name: {e}")
        return 1
    except TrainingDivergedError as e:
        logger.error(f"Training diverged: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
