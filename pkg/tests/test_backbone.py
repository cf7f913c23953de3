"""
Unit tests for the backbone feature module.
"""

import math

import pytest
import torch

from features.backbone import (
    BackboneSpec,
    FeatureExtractor,
    UnknownBackboneError,
    extract_multilevel,
    fuse_levels,
    fused_channels,
)


def bilinear_oracle(grid: list[list[float]], out_h: int, out_w: int) -> list[list[float]]:
    """Half-pixel-centre bilinear resize of a 2-D grid, written as scalar loops."""
    in_h, in_w = len(grid), len(grid[0])

    def source(index: int, in_size: int, out_size: int) -> tuple[int, int, float]:
        coordinate = max((index + 0.5) * in_size / out_size - 0.5, 0.0)
        low = int(math.floor(coordinate))
        high = min(low + 1, in_size - 1)
        return low, high, coordinate - low

    out = [[0.0] * out_w for _ in range(out_h)]
    for i in range(out_h):
        y0, y1, wy = source(i, in_h, out_h)
        for j in range(out_w):
            x0, x1, wx = source(j, in_w, out_w)
            top = grid[y0][x0] * (1 - wx) + grid[y0][x1] * wx
            bottom = grid[y1][x0] * (1 - wx) + grid[y1][x1] * wx
            out[i][j] = top * (1 - wy) + bottom * wy
    return out


class TestBackboneSpec:
    """Tests for BackboneSpec validation."""

    def test_empty_levels_rejected(self):
        with pytest.raises(ValueError):
            BackboneSpec(levels=())

    def test_unfrozen_rejected(self):
        with pytest.raises(ValueError):
            BackboneSpec(frozen=False)

    def test_spec_is_hashable(self, toy_spec):
        assert hash(toy_spec) == hash(BackboneSpec(name="toy", levels=(0, 1, 2), widths=(8, 16, 32), seed=0))


class TestExtractMultilevel:
    """Tests for extract_multilevel."""

    def test_zero_image_deterministic(self, toy_spec):
        image = torch.zeros(3, 64, 64)
        first = extract_multilevel(image, toy_spec)
        second = extract_multilevel(image, toy_spec)
        assert all(torch.equal(a, b) for a, b in zip(first, second))

    def test_toy_level_channels(self, toy_spec):
        levels = extract_multilevel(torch.rand(1, 3, 64, 64), toy_spec)
        assert [tuple(f.shape) for f in levels] == [(1, 8, 32, 32), (1, 16, 16, 16), (1, 32, 8, 8)]

    def test_level_order_follows_spec(self):
        spec = BackboneSpec(name="toy", levels=(2, 0), widths=(8, 16, 32))
        levels = extract_multilevel(torch.rand(1, 3, 64, 64), spec)
        assert [f.shape[1] for f in levels] == [32, 8]

    def test_unknown_backbone(self):
        with pytest.raises(UnknownBackboneError):
            extract_multilevel(torch.rand(3, 32, 32), BackboneSpec(name="no_such_backbone"))

    def test_unknown_backbone_is_key_error(self):
        with pytest.raises(KeyError):
            fused_channels(BackboneSpec(name="no_such_backbone"))

    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            extract_multilevel(torch.rand(3, 32, 32), BackboneSpec(name="toy", levels=(0, 5)))

    def test_rejects_wrong_channel_count(self, toy_spec):
        with pytest.raises(ValueError):
            extract_multilevel(torch.rand(1, 1, 64, 64), toy_spec)

    def test_does_not_mutate_input(self, toy_spec):
        image = torch.rand(2, 3, 64, 64)
        before = image.clone()
        extract_multilevel(image, toy_spec)
        assert torch.equal(image, before)

    def test_different_seeds_differ(self):
        image = torch.rand(1, 3, 32, 32)
        a = extract_multilevel(image, BackboneSpec(name="toy", seed=0))
        b = extract_multilevel(image, BackboneSpec(name="toy", seed=1))
        assert not torch.equal(a[0], b[0])

    def test_wide_resnet_fused_channels(self):
        spec = BackboneSpec(name="wide_resnet50_2", levels=(0, 1, 2))
        assert fused_channels(spec) == 1792


class TestFuseLevels:
    """Tests for fuse_levels."""

    def test_single_level_identity(self):
        feature = torch.rand(1, 5, 4, 4)
        assert torch.equal(fuse_levels([feature], (4, 4)), feature)

    def test_channel_sum(self):
        fused = fuse_levels([torch.rand(1, 8, 8, 8), torch.rand(1, 16, 4, 4)], (8, 8))
        assert fused.shape == (1, 24, 8, 8)

    def test_random_channel_sums(self, rng):
        for _ in range(10):
            channels = [int(c) for c in rng.integers(1, 6, size=int(rng.integers(1, 5)))]
            features = [torch.rand(2, c, int(rng.integers(1, 9)), int(rng.integers(1, 9))) for c in channels]
            assert fuse_levels(features, (6, 5)).shape == (2, sum(channels), 6, 5)

    def test_bilinear_oracle(self):
        grid = [[1.0, 2.0], [3.0, 5.0]]
        fused = fuse_levels([torch.tensor(grid, dtype=torch.float64).view(1, 1, 2, 2)], (4, 4))
        expected = torch.tensor(bilinear_oracle(grid, 4, 4), dtype=torch.float64)
        assert torch.allclose(fused[0, 0], expected, atol=1e-12)

    def test_permutation_covariance(self):
        a, b = torch.rand(1, 3, 4, 4), torch.rand(1, 2, 2, 2)
        ab = fuse_levels([a, b], (4, 4))
        ba = fuse_levels([b, a], (4, 4))
        assert torch.equal(ab[:, :3], ba[:, 2:])
        assert torch.equal(ab[:, 3:], ba[:, :2])

    def test_unbatched(self):
        fused = fuse_levels([torch.rand(3, 2, 2), torch.rand(4, 4, 4)], (4, 4))
        assert fused.shape == (7, 4, 4)

    def test_empty_list(self):
        with pytest.raises(ValueError):
            fuse_levels([], (4, 4))

    def test_nonpositive_target(self):
        with pytest.raises(ValueError):
            fuse_levels([torch.rand(1, 1, 2, 2)], (0, 4))


class TestFeatureExtractor:
    """Tests for FeatureExtractor."""

    def test_fused_shape(self, toy_extractor):
        features = toy_extractor(torch.rand(2, 3, 64, 64))
        assert toy_extractor.channels == 56
        assert features.shape == (2, 56, 16, 16)
        assert torch.isfinite(features).all()
