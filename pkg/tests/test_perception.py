"""
Unit tests for the uncertainty-aware perception head.
"""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from model.perception import (
    KeepDirection,
    PatchEmbed,
    PerceptionConfig,
    PerceptionHead,
    ScoreDistribution,
    auxiliary_loss,
    binarize,
    discriminative_loss,
    draw_score_samples,
    embed_tokens,
    estimate_mean_uncertainty,
    fuse_masks,
    kl_loss,
    perception_masks,
    predict_distribution,
    sample_scores,
)
from synthesis.feature_synthesis import token_ground_truth


def averaging_embed(channels: int, patch: int) -> PatchEmbed:
    """Patch embedding whose token d is the mean of channel d over its patch."""
    embed = PatchEmbed(channels, channels, patch).double()
    with torch.no_grad():
        embed.proj.weight.zero_()
        embed.proj.bias.zero_()
        for c in range(channels):
            embed.proj.weight[c, c] = 1.0 / (patch * patch)
    return embed


def kl_quadrature(u: float, sigma: float, points: int = 200001) -> float:
    """KL(N(u, sigma^2) || N(0, 1)) by the trapezoid rule."""
    x = np.linspace(u - 12 * sigma, u + 12 * sigma, points)
    log_p = -0.5 * ((x - u) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    log_q = -0.5 * x**2 - 0.5 * math.log(2 * math.pi)
    y = np.exp(log_p) * (log_p - log_q)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)


class TestPerceptionConfig:
    """Tests for PerceptionConfig defaults and validation."""

    def test_defaults(self):
        config = PerceptionConfig()
        assert config.patch == 4
        assert config.gamma == 1.0
        assert config.kl_weight == 0.001
        assert config.num_samples == 16

    def test_num_samples_at_least_two(self):
        with pytest.raises(ValueError):
            PerceptionConfig(num_samples=1)


class TestEmbedTokens:
    """Tests for PatchEmbed and embed_tokens."""

    def test_token_count(self):
        tokens = embed_tokens(torch.rand(1, 2, 64, 64), PatchEmbed(2, 8, 4))
        assert tokens.shape == (1, 256, 8)

    def test_single_patch(self):
        tokens = embed_tokens(torch.rand(3, 4, 4), PatchEmbed(3, 5, 4))
        assert tokens.shape == (1, 5)

    def test_average_pool_weights(self):
        features = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        tokens = embed_tokens(features, averaging_embed(3, 2))
        for b in range(2):
            for r in range(4):
                for c in range(4):
                    patch_mean = features[b, :, 2 * r:2 * r + 2, 2 * c:2 * c + 2].mean(dim=(1, 2))
                    assert torch.allclose(tokens[b, r * 4 + c], patch_mean, atol=1e-12)

    def test_order_matches_ground_truth(self):
        embed = averaging_embed(1, 4)
        for y, x in [(0, 0), (5, 2), (3, 13), (15, 15)]:
            features = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
            features[0, 0, y, x] = 1.0
            mask = torch.zeros(16, 16)
            mask[y, x] = 1
            token = int(embed_tokens(features, embed)[0, :, 0].argmax())
            assert token == int(token_ground_truth(mask, 4).argmax())

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            embed_tokens(torch.rand(1, 2, 10, 8), PatchEmbed(2, 4, 4))


class TestPredictDistribution:
    """Tests for PerceptionHead and predict_distribution."""

    def test_zero_head(self):
        head = PerceptionHead(6)
        for module in (head.mean, head.scale):
            torch.nn.init.zeros_(module.weight)
            torch.nn.init.zeros_(module.bias)
        dist = predict_distribution(torch.zeros(1, 4, 6), head)
        assert torch.equal(dist.u, torch.zeros(1, 4))
        assert torch.allclose(dist.sigma, torch.full((1, 4), math.log(2.0)))

    def test_duplicated_rows(self):
        head = PerceptionHead(6)
        row = torch.randn(1, 1, 6)
        dist = predict_distribution(row.expand(1, 3, 6), head)
        assert torch.allclose(dist.u, dist.u[:, :1].expand(1, 3))
        assert torch.allclose(dist.sigma, dist.sigma[:, :1].expand(1, 3))

    def test_affine_oracle(self):
        head = PerceptionHead(5).double()
        tokens = torch.randn(2, 7, 5, dtype=torch.float64)
        dist = predict_distribution(tokens, head)
        expected_u = tokens @ head.mean.weight[0] + head.mean.bias[0]
        expected_sigma = torch.log1p(torch.exp(tokens @ head.scale.weight[0] + head.scale.bias[0]))
        assert torch.allclose(dist.u, expected_u, atol=1e-12)
        assert torch.allclose(dist.sigma, expected_sigma, atol=1e-12)

    def test_sigma_positive(self):
        dist = predict_distribution(torch.randn(3, 9, 4) * 50, PerceptionHead(4))
        assert torch.all(dist.sigma >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            predict_distribution(torch.randn(1, 3, 5), PerceptionHead(4))


class TestSampleScores:
    """Tests for sample_scores."""

    def test_zero_eps(self):
        dist = ScoreDistribution(torch.randn(4), torch.rand(4))
        assert torch.equal(sample_scores(dist, torch.zeros(4)), dist.u)

    def test_zero_sigma(self):
        dist = ScoreDistribution(torch.randn(4), torch.zeros(4))
        assert torch.equal(sample_scores(dist, torch.randn(4)), dist.u)

    def test_monte_carlo_moments(self):
        n = 1_000_000
        dist = ScoreDistribution(torch.ones(n, dtype=torch.float64), torch.full((n,), 2.0, dtype=torch.float64))
        eps = torch.randn(n, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        z = sample_scores(dist, eps)
        assert z.mean().item() == pytest.approx(1.0, abs=0.01)
        assert z.std().item() == pytest.approx(2.0, abs=0.01)

    def test_differentiable(self):
        u = torch.zeros(3, requires_grad=True)
        sigma = torch.ones(3, requires_grad=True)
        eps = torch.tensor([0.5, -1.0, 2.0])
        sample_scores(ScoreDistribution(u, sigma), eps).sum().backward()
        assert torch.equal(u.grad, torch.ones(3))
        assert torch.equal(sigma.grad, eps)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sample_scores(ScoreDistribution(torch.zeros(4), torch.ones(4)), torch.zeros(3))


class TestDiscriminativeLoss:
    """Tests for discriminative_loss."""

    def test_zero_logits(self):
        z = torch.zeros(6)
        g = torch.tensor([0, 1, 0, 1, 1, 0.0])
        assert discriminative_loss(z, g, z, torch.zeros(6)).item() == pytest.approx(2 * math.log(2), abs=1e-6)

    def test_confident_logits(self):
        g_sa = torch.tensor([1, 0, 1, 0.0])
        z_sa = (2 * g_sa - 1) * 100
        loss = discriminative_loss(z_sa, g_sa, torch.full((4,), -100.0), torch.zeros(4))
        assert loss.item() < 1e-6

    def test_scalar_loop_oracle(self, rng):
        z_sa, z_n = rng.normal(size=10), rng.normal(size=10)
        g_sa, g_n = rng.integers(0, 2, size=10), np.zeros(10)

        def bce(z, g):
            total = 0.0
            for zi, gi in zip(z, g):
                p = 1.0 / (1.0 + math.exp(-zi))
                total += -(gi * math.log(p) + (1 - gi) * math.log(1 - p))
            return total / len(z)

        loss = discriminative_loss(
            torch.tensor(z_sa), torch.tensor(g_sa, dtype=torch.float64), torch.tensor(z_n), torch.tensor(g_n)
        )
        assert loss.item() == pytest.approx(bce(z_sa, g_sa) + bce(z_n, g_n), rel=1e-10)

    def test_non_binary_labels(self):
        with pytest.raises(ValueError):
            discriminative_loss(torch.zeros(3), torch.tensor([0, 0.5, 1]), torch.zeros(3), torch.zeros(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            discriminative_loss(torch.zeros(3), torch.zeros(4), torch.zeros(3), torch.zeros(3))


class TestKlLoss:
    """Tests for kl_loss."""

    def test_standard_normal(self):
        assert kl_loss(ScoreDistribution(torch.zeros(5), torch.ones(5))).item() == 0.0

    def test_unit_mean(self):
        assert kl_loss(ScoreDistribution(torch.ones(5), torch.ones(5))).item() == pytest.approx(0.5)

    def test_quadrature_oracle(self, rng):
        for _ in range(5):
            u, sigma = float(rng.normal()), float(rng.uniform(0.3, 2.5))
            dist = ScoreDistribution(torch.tensor([u], dtype=torch.float64), torch.tensor([sigma], dtype=torch.float64))
            assert kl_loss(dist).item() == pytest.approx(kl_quadrature(u, sigma), abs=1e-6)

    def test_nonnegative_on_grid(self):
        for u in np.linspace(-2, 2, 9):
            for sigma in np.linspace(0.25, 3, 12):
                dist = ScoreDistribution(torch.tensor([u]), torch.tensor([sigma]))
                value = kl_loss(dist).item()
                assert value >= 0
                if not (u == 0 and sigma == 1):
                    assert value > 0

    def test_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            kl_loss(ScoreDistribution(torch.zeros(2), torch.tensor([1.0, 0.0])))


class TestAuxiliaryLoss:
    """Tests for auxiliary_loss."""

    def test_weighted_sum(self):
        assert auxiliary_loss(1.0, 2.0, 0.001) == pytest.approx(1.002)

    def test_zero_weight(self):
        assert auxiliary_loss(0.7, 5.0, 0.0) == 0.7

    def test_default_weight(self):
        assert auxiliary_loss(1.0, 1.0) == pytest.approx(1.001)

    def test_gradcheck_scores(self):
        eps_sa = torch.randn(8, dtype=torch.float64)
        eps_n = torch.randn(8, dtype=torch.float64)
        g_sa = torch.tensor([1, 0, 0, 1, 1, 0, 0, 0], dtype=torch.float64)
        g_n = torch.zeros(8, dtype=torch.float64)

        def loss(u_sa, s_sa, u_n, s_n):
            dist_sa = ScoreDistribution(u_sa, F.softplus(s_sa))
            dist_n = ScoreDistribution(u_n, F.softplus(s_n))
            l_dis = discriminative_loss(sample_scores(dist_sa, eps_sa), g_sa, sample_scores(dist_n, eps_n), g_n)
            l_kl = kl_loss(ScoreDistribution.concat([dist_sa, dist_n]))
            return auxiliary_loss(l_dis, l_kl, 0.001)

        inputs = tuple(torch.randn(8, dtype=torch.float64, requires_grad=True) for _ in range(4))
        assert torch.autograd.gradcheck(loss, inputs, eps=1e-6, atol=1e-8, rtol=1e-4)

    def test_head_weight_gradients(self, finite_difference):
        torch.manual_seed(0)
        head = PerceptionHead(6).double()
        tokens = torch.randn(1, 8, 6, dtype=torch.float64)
        eps = torch.randn(1, 8, dtype=torch.float64)
        labels = torch.tensor([[0, 1, 1, 0, 0, 0, 1, 0]], dtype=torch.float64)

        def loss():
            dist = head(tokens)
            z = sample_scores(dist, eps)
            return auxiliary_loss(discriminative_loss(z, labels, z, torch.zeros_like(labels)), kl_loss(dist))

        for name, analytic, numeric in finite_difference(loss, head.named_parameters(), samples=6):
            assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8), name


class TestEstimateMeanUncertainty:
    """Tests for estimate_mean_uncertainty."""

    def test_degenerate_sigma(self):
        dist = ScoreDistribution(torch.randn(2, 5), torch.zeros(2, 5))
        mean, spread = estimate_mean_uncertainty(dist, 16, seed=0)
        assert torch.equal(mean, dist.u)
        assert torch.equal(spread, torch.zeros(2, 5))

    def test_monte_carlo_convergence(self):
        dist = ScoreDistribution(torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64))
        mean, spread = estimate_mean_uncertainty(dist, 100_000, seed=1)
        assert torch.all(mean.abs() < 0.02)
        assert torch.all((spread - 1).abs() < 0.02)

    def test_error_shrinks_with_m(self):
        dist = ScoreDistribution(torch.zeros(64, dtype=torch.float64), torch.ones(64, dtype=torch.float64))
        small_u, small_v = estimate_mean_uncertainty(dist, 100, seed=2)
        large_u, large_v = estimate_mean_uncertainty(dist, 10_000, seed=3)
        assert large_u.abs().mean() < small_u.abs().mean()
        assert (large_v - 1).abs().mean() < (small_v - 1).abs().mean()

    def test_two_fixed_draws(self):
        u = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)
        sigma = torch.tensor([1.0, 0.5, 2.0], dtype=torch.float64)
        eps = torch.tensor([[1.0, -0.5, 0.2], [-1.0, 1.5, 0.6]], dtype=torch.float64)
        mean, spread = estimate_mean_uncertainty(ScoreDistribution(u, sigma), 2, eps=eps)

        z1, z2 = u + eps[0] * sigma, u + eps[1] * sigma
        assert torch.allclose(mean, (z1 + z2) / 2, atol=1e-12)
        assert torch.allclose(spread, (z1 - z2).abs() / 2, atol=1e-12)

    def test_input_left_untouched(self):
        u, sigma = torch.zeros(1, 6), torch.ones(1, 6)
        dist = ScoreDistribution(u, sigma)
        estimate_mean_uncertainty(dist, 4, seed=0)
        assert dist.samples is None
        assert dist.u is u and dist.sigma is sigma

    def test_drawn_samples_match_estimates(self):
        dist = ScoreDistribution(torch.randn(2, 6, dtype=torch.float64), torch.rand(2, 6, dtype=torch.float64) + 0.1)
        drawn = draw_score_samples(dist, 5, seed=7)
        mean, spread = estimate_mean_uncertainty(dist, 5, seed=7)

        assert dist.samples is None
        assert drawn.samples.shape == (5, 2, 6)
        assert torch.equal(drawn.u, dist.u)
        assert torch.allclose(drawn.samples.mean(dim=0), mean, atol=1e-12)
        assert torch.allclose(drawn.samples.std(dim=0, correction=0), spread, atol=1e-12)

    def test_deterministic_and_batch_independent(self):
        dist = ScoreDistribution(torch.randn(3, 5), torch.rand(3, 5) + 0.1)
        batched = estimate_mean_uncertainty(dist, 8, seed=4)
        single = estimate_mean_uncertainty(ScoreDistribution(dist.u[1:2], dist.sigma[1:2]), 8, seed=4)
        assert torch.allclose(batched[0][1], single[0][0])
        assert torch.allclose(batched[1][1], single[1][0])

    def test_m_below_two(self):
        with pytest.raises(ValueError):
            estimate_mean_uncertainty(ScoreDistribution(torch.zeros(3), torch.ones(3)), 1)


class TestBinarize:
    """Tests for binarize."""

    def test_constant_sequence(self):
        assert torch.equal(binarize(torch.full((6,), 3.0), 1.0), torch.ones(6))

    def test_hand_computed_threshold(self):
        seq = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64)
        threshold = 0.25 + math.sqrt(0.1875)
        assert threshold == pytest.approx(0.683, abs=1e-3)
        assert binarize(seq, 1.0).tolist() == [1, 1, 1, 0]

    def test_keep_high(self):
        seq = torch.tensor([0.0, 1.0, 1.0, 1.0], dtype=torch.float64)
        assert binarize(seq, 1.0, KeepDirection.HIGH).tolist() == [0, 1, 1, 1]

    def test_affine_invariance(self, rng):
        for _ in range(1000):
            seq = torch.from_numpy(rng.normal(size=16))
            a, b = float(rng.uniform(0.1, 10)), float(rng.uniform(-5, 5))
            gamma = float(rng.uniform(0, 2))
            assert torch.equal(binarize(seq, gamma), binarize(a * seq + b, gamma))

    def test_scale_invariance_float32(self, rng):
        # powers of two scale every value exactly
        for scale in (2.0**-20, 2.0**-10, 2.0**10):
            for _ in range(200):
                seq = torch.from_numpy(rng.normal(size=16).astype(np.float32))
                gamma = float(rng.uniform(0, 2))
                assert torch.equal(binarize(seq, gamma), binarize(seq * scale, gamma))

    def test_tiny_spread_is_thresholded(self):
        seq = torch.tensor([0.0, 0.0, 0.0, 1.0])
        assert binarize(seq * 1e-6, 1.0).tolist() == binarize(seq, 1.0).tolist() == [1, 1, 1, 0]

    def test_inexact_constant_float32(self):
        seq = torch.full((16,), 0.1, dtype=torch.float32)
        assert torch.equal(binarize(seq, 0.5), torch.ones(16))
        assert torch.equal(binarize(seq, 0.5, KeepDirection.HIGH), torch.ones(16))

    def test_batched_rows_independent(self):
        seq = torch.tensor([[0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        assert binarize(seq, 1.0).tolist() == [[1, 1, 1, 0], [0, 1, 1, 1]]


class TestFuseMasks:
    """Tests for fuse_masks."""

    def test_truth_table(self):
        assert fuse_masks(torch.tensor([1.0, 1, 0, 0]), torch.tensor([1.0, 0, 1, 0])).tolist() == [1, 0, 0, 0]

    def test_identity(self):
        m_u = torch.tensor([1.0, 0, 1, 1, 0])
        assert torch.equal(fuse_masks(m_u, torch.ones(5)), m_u)

    def test_masked_out_union(self, rng):
        for _ in range(1000):
            m_u = torch.from_numpy(rng.integers(0, 2, size=12)).float()
            m_v = torch.from_numpy(rng.integers(0, 2, size=12)).float()
            fused = fuse_masks(m_u, m_v)
            masked_out = {i for i in range(12) if fused[i] == 0}
            union = {i for i in range(12) if m_u[i] == 0} | {i for i in range(12) if m_v[i] == 0}
            assert masked_out == union

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_masks(torch.ones(3), torch.ones(4))


class TestPerceptionMasks:
    """Tests for perception_masks."""

    def test_analytic_moments(self):
        dist = ScoreDistribution(torch.randn(2, 16), torch.rand(2, 16) + 0.1)
        result = perception_masks(dist, 1.0)
        assert torch.equal(result.U, dist.u)
        assert torch.equal(result.V, dist.sigma)

    def test_final_within_components(self, rng):
        for seed in range(20):
            generator = torch.Generator().manual_seed(seed)
            dist = ScoreDistribution(torch.randn(1, 32, generator=generator), torch.rand(1, 32, generator=generator))
            result = perception_masks(dist, 1.0, num_samples=16, seed=seed)
            assert torch.all(result.m_final <= result.m_u)
            assert torch.all(result.m_final <= result.m_v)
            assert (1 - result.m_final).mean() >= (1 - result.m_u).mean()

    def test_no_gradient(self):
        u = torch.randn(1, 8, requires_grad=True)
        sigma = torch.rand(1, 8) + 0.1
        result = perception_masks(ScoreDistribution(u, sigma), 1.0)
        assert not result.m_final.requires_grad
