"""
Restoration reconstructor.

Restoration blocks use ReLU attention whose keys and values are zeroed at
tokens the perception mask flags as suspect, so every query is rebuilt
from normal context only. Vanilla pre-norm transformer blocks refine the
result, and an unembedding maps tokens back to a feature map.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from model.perception import PatchEmbed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructorConfig:
    """
    Reconstructor architecture.

    Attributes:
        n_restoration_blocks: Masked restoration blocks (N1)
        n_refine_blocks: Vanilla refinement blocks (N2)
        heads: Attention heads
        dim: Token dimension D
        mlp_ratio: MLP hidden width as a multiple of dim
        positional: Add learned positional embeddings to the tokens
    """

    n_restoration_blocks: int = 2
    n_refine_blocks: int = 2
    heads: int = 12
    dim: int = 768
    mlp_ratio: float = 4.0
    positional: bool = False

    def __post_init__(self) -> None:
        if self.n_restoration_blocks < 0 or self.n_refine_blocks < 0:
            raise ValueError("Block counts must be nonnegative")
        if self.heads <= 0 or self.dim <= 0:
            raise ValueError(f"heads and dim must be positive, got heads={self.heads}, dim={self.dim}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.mlp_ratio <= 0:
            raise ValueError(f"mlp_ratio must be positive, got {self.mlp_ratio}")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, length, dim = x.shape
    return x.view(batch, length, heads, dim // heads).transpose(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, length, head_dim = x.shape
    return x.transpose(1, 2).contiguous().view(batch, length, heads * head_dim)


def _check_keep(keep: Tensor, x: Tensor) -> Tensor:
    if keep.dim() == 1:
        keep = keep.unsqueeze(0).expand(x.shape[0], -1)
    if keep.shape != x.shape[:2]:
        raise ValueError(f"Keep-mask shape {tuple(keep.shape)} does not match tokens {tuple(x.shape[:2])}")
    if not torch.all((keep == 0) | (keep == 1)):
        raise ValueError("Keep-mask must contain only 0 and 1")
    return keep.to(x.dtype)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


class RestorationAttention(nn.Module):
    """
    Multi-head masked ReLU attention.

    A = beta * ReLU(Q K_m^T) and Z = A V_m per head, where K_m and V_m have
    the rows of masked-out tokens zeroed. beta is one learnable scalar.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)
        self.beta = nn.Parameter(torch.tensor((dim // heads) ** -0.5))

    def forward(self, x: Tensor, keep: Tensor) -> tuple[Tensor, Tensor]:
        """
        Args:
            x: (B, L, D) tokens.
            keep: (B, L) or (L,) binary keep-mask, 1 = usable context.

        Returns:
            (Z, attention) with Z (B, L, D) and attention (B, heads, L, L).
        """
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise ValueError(f"Expected (B, L, {self.dim}) tokens, got {tuple(x.shape)}")
        gate = _check_keep(keep, x).unsqueeze(-1)

        q = _split_heads(self.q(x), self.heads)
        k = _split_heads(self.k(x) * gate, self.heads)
        v = _split_heads(self.v(x) * gate, self.heads)

        attention = self.beta * F.relu(torch.matmul(q, k.transpose(-2, -1)))
        z = _merge_heads(torch.matmul(attention, v))
        return self.out(z), attention


class SelfAttention(nn.Module):
    """Standard multi-head softmax self-attention."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise ValueError(f"Expected (B, L, {self.dim}) tokens, got {tuple(x.shape)}")
        q, k, v = (_split_heads(t, self.heads) for t in self.qkv(x).chunk(3, dim=-1))
        attention = torch.softmax(torch.matmul(q, k.transpose(-2, -1)) * self.scale, dim=-1)
        return self.out(_merge_heads(torch.matmul(attention, v))), attention


class RestorationBlock(nn.Module):
    """
    E = H + MLP(LN(H)) with H = Z (first residual removed) or X + Z.

    Z is masked restoration attention over the block input X.
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0, remove_first_skip: bool = True):
        super().__init__()
        self.remove_first_skip = remove_first_skip
        self.attn = RestorationAttention(dim, heads)
        self.norm = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: Tensor, keep: Tensor) -> tuple[Tensor, Tensor]:
        z, attention = self.attn(x, keep)
        h = z if self.remove_first_skip else x + z
        return h + self.mlp(self.norm(h)), attention


class TransformerBlock(nn.Module):
    """Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0, remove_first_skip: bool = False):
        super().__init__()
        self.remove_first_skip = remove_first_skip
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: Tensor, keep: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z, attention = self.attn(self.norm1(x))
        h = z if self.remove_first_skip else x + z
        return h + self.mlp(self.norm2(h)), attention


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def refine_decoder(tokens: Tensor, blocks: nn.ModuleList) -> Tensor:
    """Run tokens through vanilla transformer blocks."""
    for block in blocks:
        tokens, _ = block(tokens)
    return tokens


class Unembed(nn.Module):
    """
    Tokens back to a feature map: Linear(D -> K*K*C), then depth-to-space.

    Projection output index c*K*K + ky*K + kx lands at channel c,
    row r*K + ky, column q*K + kx of token t = r * (W/K) + q.
    """

    def __init__(self, dim: int, channels: int, patch: int):
        super().__init__()
        self.channels = channels
        self.patch = patch
        self.proj = nn.Linear(dim, patch * patch * channels)

    def forward(self, tokens: Tensor, grid_hw: tuple[int, int]) -> Tensor:
        rows, cols = grid_hw
        batch, length, _ = tokens.shape
        if length != rows * cols:
            raise ValueError(f"{length} tokens cannot fill a {rows}x{cols} grid")
        projected = self.proj(tokens).transpose(1, 2).reshape(batch, -1, rows, cols)
        return F.pixel_shuffle(projected, self.patch)


class Reconstructor(nn.Module):
    """
    Patch embedding, N1 restoration blocks sharing one keep-mask, N2
    refinement blocks and the unembedding.

    With use_restoration_attention=False the restoration blocks are
    vanilla transformer blocks and the keep-mask is ignored.
    """

    def __init__(
        self,
        config: ReconstructorConfig,
        channels: int,
        patch: int,
        num_tokens: int | None = None,
        use_restoration_attention: bool = True,
        remove_first_skip: bool = True,
    ):
        super().__init__()
        self.config = config
        self.patch = patch
        self.use_restoration_attention = use_restoration_attention
        self.embed = PatchEmbed(channels, config.dim, patch)

        if config.positional:
            if num_tokens is None:
                raise ValueError("Positional embeddings need num_tokens")
            self.pos_embed = nn.Parameter(torch.zeros(1, num_tokens, config.dim))
            nn.init.trunc_normal_(self.pos_embed, std=0.02)
        else:
            self.pos_embed = None

        if use_restoration_attention:
            blocks = [
                RestorationBlock(config.dim, config.heads, config.mlp_ratio, remove_first_skip)
                for _ in range(config.n_restoration_blocks)
            ]
        else:
            blocks = [
                TransformerBlock(config.dim, config.heads, config.mlp_ratio, remove_first_skip)
                for _ in range(config.n_restoration_blocks)
            ]
        self.blocks = nn.ModuleList(blocks)
        self.refine = nn.ModuleList(
            TransformerBlock(config.dim, config.heads, config.mlp_ratio) for _ in range(config.n_refine_blocks)
        )
        self.unembed = Unembed(config.dim, channels, patch)
        self.initialize_weights()

    def initialize_weights(self) -> None:
        """Xavier-uniform linear maps and patch embedding, zero biases, unit layer norms."""
        weight = self.embed.proj.weight.data
        nn.init.xavier_uniform_(weight.view(weight.shape[0], -1))
        nn.init.zeros_(self.embed.proj.bias)
        self.apply(_init_weights)

    def tokens(self, features: Tensor) -> Tensor:
        tokens = self.embed(features)
        if self.pos_embed is not None:
            tokens = tokens + self.pos_embed
        return tokens

    def restore(
        self,
        tokens: Tensor,
        keep: Tensor | None,
        grid_hw: tuple[int, int],
        return_attention: bool = False,
    ) -> tuple[Tensor, list[Tensor]]:
        """
        Restore tokens and unembed them.

        Returns:
            (F_hat, attention maps of the restoration blocks; empty unless requested)
        """
        if keep is None:
            keep = torch.ones(tokens.shape[:2], dtype=tokens.dtype, device=tokens.device)
        maps = []
        x = tokens
        for block in self.blocks:
            x, attention = block(x, keep)
            if return_attention:
                maps.append(attention.detach())
        x = refine_decoder(x, self.refine)
        return self.unembed(x, grid_hw), maps

    def forward(self, features: Tensor, keep: Tensor | None = None) -> Tensor:
        grid_hw = self.embed.grid(*features.shape[-2:])
        f_hat, _ = self.restore(self.tokens(features), keep, grid_hw)
        return f_hat


def reconstruct(f_in: Tensor, m_final: Tensor | None, reconstructor: Reconstructor) -> Tensor:
    """F_hat for (B, C, H, W) or (C, H, W) features; output shape equals input shape."""
    if f_in.dim() == 3:
        keep = m_final.unsqueeze(0) if m_final is not None and m_final.dim() == 1 else m_final
        return reconstructor(f_in.unsqueeze(0), keep).squeeze(0)
    return reconstructor(f_in, m_final)
