"""
Unit tests for Perlin mask generation.
"""

import numpy as np
import pytest

from synthesis.perlin import PerlinParams, binarize_noise, normalized_noise, perlin_mask, rand_perlin_2d


class TestPerlinParams:
    """Tests for PerlinParams validation."""

    @pytest.mark.parametrize("threshold", [0.0, 1.0, -0.2, 1.5])
    def test_threshold_open_interval(self, threshold):
        with pytest.raises(ValueError):
            PerlinParams(threshold=threshold)

    def test_scale_range_powers_of_two(self):
        with pytest.raises(ValueError):
            PerlinParams(scale_range=(3, 8))

    def test_scale_range_order(self):
        with pytest.raises(ValueError):
            PerlinParams(scale_range=(8, 2))

    def test_positive_size(self):
        with pytest.raises(ValueError):
            PerlinParams(height=0)


class TestPerlinMask:
    """Tests for perlin_mask and its building blocks."""

    def test_deterministic(self):
        params = PerlinParams(16, 16, seed=42)
        assert np.array_equal(perlin_mask(params), perlin_mask(params))

    def test_binary(self):
        for seed in range(20):
            mask = perlin_mask(PerlinParams(16, 16, seed=seed))
            assert mask.dtype == np.uint8
            assert set(np.unique(mask)) <= {0, 1}

    def test_seeds_differ(self):
        masks = {perlin_mask(PerlinParams(16, 16, seed=s)).tobytes() for s in range(10)}
        assert len(masks) > 1

    def test_mean_area_fraction(self):
        # seeds 0..999 at 16x16 with the default threshold average 0.478
        fractions = [perlin_mask(PerlinParams(16, 16, seed=s)).mean() for s in range(1000)]
        assert float(np.mean(fractions)) == pytest.approx(0.478, abs=0.01)

    def test_non_square(self):
        mask = perlin_mask(PerlinParams(8, 16, seed=3))
        assert mask.shape == (8, 16)

    def test_noise_range(self):
        field = normalized_noise(PerlinParams(16, 16, seed=5))
        assert field.min() == pytest.approx(0.0)
        assert field.max() == pytest.approx(1.0)

    def test_lattice_need_not_divide_shape(self, rng):
        noise = rand_perlin_2d((10, 7), (4, 2), rng)
        assert noise.shape == (10, 7)
        assert np.isfinite(noise).all()

    def test_area_monotone_in_threshold(self):
        field = normalized_noise(PerlinParams(32, 32, seed=9))
        counts = [int(binarize_noise(field, t).sum()) for t in np.linspace(0.05, 0.95, 19)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
