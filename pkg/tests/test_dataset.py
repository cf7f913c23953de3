"""
Unit tests for dataset indexing and the toy dataset generator.
"""

import shutil

import numpy as np
import pytest
from PIL import Image

from evaluation.metrics import ScoredSet, auroc
from pipeline.config import DatasetLayout
from pipeline.dataset import (
    DatasetError,
    ImageSet,
    _normal_texture,
    _paste_defect,
    _save_rgb,
    generate_toy_dataset,
    load_dataset,
    load_mask,
)


@pytest.fixture
def toy_copy(toy_dataset, tmp_path):
    """A private copy of the toy dataset that a test may damage."""
    root = tmp_path / "data"
    shutil.copytree(toy_dataset.root, root)
    return root


def write_flat(root, n_train=3, n_normal=2, n_anomalous=2, masks=True):
    rng = np.random.default_rng(0)
    for directory in ("train", "test/normal", "test/anomalous", "masks"):
        (root / directory).mkdir(parents=True, exist_ok=True)
    for i in range(n_train):
        _save_rgb(_normal_texture(rng, 32), root / "train" / f"t{i}.png")
    for i in range(n_normal):
        _save_rgb(_normal_texture(rng, 32), root / "test" / "normal" / f"n{i}.png")
    for i in range(n_anomalous):
        defective, mask = _paste_defect(rng, _normal_texture(rng, 32))
        _save_rgb(defective, root / "test" / "anomalous" / f"a{i}.png")
        if masks:
            _save_rgb(np.repeat(mask[..., None], 3, axis=2).astype(np.float32), root / "masks" / f"a{i}.png")


class TestToyDataset:
    """Tests for generate_toy_dataset."""

    def test_counts_and_labels(self, toy_dataset):
        assert len(toy_dataset.train) == 8
        assert len(toy_dataset.test) == 8
        assert (toy_dataset.train["label"] == 0).all()
        assert toy_dataset.test["label"].sum() == 4
        assert toy_dataset.has_masks

    def test_defect_mask_marks_changed_pixels(self, rng):
        image = _normal_texture(rng, 64)
        defective, mask = _paste_defect(rng, image)
        changed = (defective != image).any(axis=2)
        assert np.array_equal(changed, mask.astype(bool))
        assert 0 < mask.sum() <= 16 * 16

    def test_deterministic(self, toy_dataset, tmp_path):
        again = generate_toy_dataset(tmp_path / "again", n_train=8, n_test=4, seed=0)
        for first, second in zip(toy_dataset.records["path"], again.records["path"]):
            with open(first, "rb") as a, open(second, "rb") as b:
                assert a.read() == b.read()

    def test_masks_load_binary(self, toy_dataset):
        anomalous = toy_dataset.test[toy_dataset.test["label"] == 1]
        for mask_path in anomalous["mask_path"]:
            mask = load_mask(mask_path, 64)
            assert mask.shape == (64, 64)
            assert set(np.unique(mask)) == {0, 1}

    def test_separable_by_spectral_detector(self, toy_dataset):
        # six full periods per side: normal energy sits in the four (±6, ±6) bins
        scores = []
        for path in toy_dataset.test["path"]:
            with Image.open(path) as image:
                gray = np.asarray(image.convert("L"), dtype=np.float64) / 255.0
            power = np.abs(np.fft.fft2(gray - gray.mean())) ** 2
            peaks = sum(power[r, c] for r in (6, -6) for c in (6, -6))
            scores.append(1.0 - peaks / power.sum())
        assert auroc(ScoredSet(np.array(scores), toy_dataset.test["label"].to_numpy())) > 0.5

    def test_separable_by_mean_difference(self, toy_dataset):
        def read(path):
            with Image.open(path) as image:
                return np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0

        mean_train = np.mean([read(p) for p in toy_dataset.train["path"]], axis=0)
        scores = np.array([np.abs(read(p) - mean_train).mean() for p in toy_dataset.test["path"]])
        assert auroc(ScoredSet(scores, toy_dataset.test["label"].to_numpy())) > 0.5

    def test_rejects_empty_counts(self, tmp_path):
        with pytest.raises(ValueError):
            generate_toy_dataset(tmp_path, n_train=0)


class TestLoadDataset:
    """Tests for load_dataset and its error cases."""

    def test_lexicographic_order(self, toy_dataset):
        for split in (toy_dataset.train, toy_dataset.test):
            paths = list(split["path"])
            assert paths == sorted(paths)

    def test_missing_mask(self, toy_copy):
        victim = sorted((toy_copy / "toy" / "ground_truth" / "patch").iterdir())[0]
        victim.unlink()
        with pytest.raises(DatasetError, match=victim.stem.replace("_mask", "")):
            load_dataset(toy_copy, category="toy")

        index = load_dataset(toy_copy, category="toy", pixel_eval=False)
        anomalous = index.test[index.test["label"] == 1]
        assert anomalous["mask_path"].isna().sum() == 1
        assert not index.has_masks

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "absent")

    def test_missing_category(self, toy_dataset):
        with pytest.raises(FileNotFoundError):
            load_dataset(toy_dataset.root, category="screw")

    def test_anomalous_training_directory(self, toy_copy):
        (toy_copy / "toy" / "train" / "crack").mkdir()
        with pytest.raises(DatasetError):
            load_dataset(toy_copy, category="toy")

    def test_empty_test_split(self, toy_copy):
        shutil.rmtree(toy_copy / "toy" / "test")
        with pytest.raises(DatasetError, match="test"):
            load_dataset(toy_copy, category="toy")

    def test_flat_layout(self, tmp_path):
        write_flat(tmp_path)
        index = load_dataset(tmp_path, DatasetLayout.FLAT)
        assert len(index.train) == 3
        assert index.test["label"].tolist() == [1, 1, 0, 0]
        assert index.has_masks

    def test_flat_layout_missing_masks(self, tmp_path):
        write_flat(tmp_path, masks=False)
        with pytest.raises(DatasetError):
            load_dataset(tmp_path, "flat")
        assert not load_dataset(tmp_path, "flat", pixel_eval=False).has_masks


class TestImages:
    """Tests for load_mask and ImageSet."""

    def test_no_mask_is_all_normal(self):
        assert np.count_nonzero(load_mask(None, 16)) == 0
        assert np.count_nonzero(load_mask(float("nan"), 16)) == 0

    def test_image_set_batch(self, toy_dataset):
        images = ImageSet(list(toy_dataset.train["path"]), 32)
        batch = images.batch([0, 3, 3])
        assert batch.shape == (3, 3, 32, 32)
        assert batch.min() >= 0 and batch.max() <= 1

    def test_empty_image_set(self):
        with pytest.raises(DatasetError):
            ImageSet([], 32)
