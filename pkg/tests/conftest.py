"""
Pytest configuration and shared fixtures.
"""

from pathlib import Path

import numpy as np
import pytest
import torch

from features.backbone import BackboneSpec, FeatureExtractor
from pipeline.config import RunConfig, apply_overrides, profile_config
from pipeline.dataset import DatasetIndex, generate_toy_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running toy-scale acceptance test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """A seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def toy_spec():
    """The deterministic toy backbone with widths (8, 16, 32)."""
    return BackboneSpec(name="toy", levels=(0, 1, 2), widths=(8, 16, 32), seed=0)


@pytest.fixture
def toy_extractor(toy_spec):
    """Fused 56-channel, 16x16 features of 64x64 images."""
    return FeatureExtractor(toy_spec, feature_size=16)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> DatasetIndex:
    """A small generated toy dataset shared by the whole session."""
    root = tmp_path_factory.mktemp("toy_data")
    return generate_toy_dataset(root, n_train=8, n_test=4, seed=0)


@pytest.fixture
def tiny_config(toy_dataset, tmp_path) -> RunConfig:
    """Toy profile shrunk to a four-step run writing under tmp_path."""
    return apply_overrides(
        profile_config("toy"),
        {
            "dataset": {"root": str(toy_dataset.root), "category": toy_dataset.category},
            "reconstructor": {"dim": 32, "heads": 4},
            "optimizer": {"batch_size": 4, "max_steps": 4},
            "synthesis": {"n_procedural_sources": 4},
            "output_dir": str(tmp_path / "run"),
            "log_every": 1,
        },
    )


@pytest.fixture
def finite_difference():
    """
    Factory comparing autograd gradients with central differences.

    Returns a function (loss_fn, parameters, samples, h) -> list of
    (name, analytic, numeric) for `samples` random entries per parameter.
    """

    def _check(loss_fn, named_parameters, samples: int = 3, h: float = 1e-6, seed: int = 0):
        generator = np.random.default_rng(seed)
        named_parameters = [(n, p) for n, p in named_parameters if p.requires_grad]
        for _, param in named_parameters:
            param.grad = None
        loss_fn().backward()
        results = []
        for name, param in named_parameters:
            flat = param.data.view(-1)
            grad = param.grad.reshape(-1) if param.grad is not None else torch.zeros_like(flat)
            for raw in generator.choice(flat.numel(), size=min(samples, flat.numel()), replace=False):
                index = int(raw)
                original = flat[index].item()
                with torch.no_grad():
                    flat[index] = original + h
                    plus = loss_fn().item()
                    flat[index] = original - h
                    minus = loss_fn().item()
                    flat[index] = original
                results.append((f"{name}[{index}]", grad[index].item(), (plus - minus) / (2 * h)))
        return results

    return _check


@pytest.fixture
def repo_root() -> Path:
    return Path(__file__).resolve().parent.parent
