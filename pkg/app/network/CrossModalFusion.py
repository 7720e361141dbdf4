"""
Bi-directional cross-modal attention and learnable series pooling.

    Ṽ = V W_v,  M̃ = M W_m
    V' = MHA(Ṽ, M̃, M̃),  V'' = LN(V' + Ṽ + FF(V' + Ṽ))
    M' = MHA(M̃, Ṽ, Ṽ),  M'' = LN(M' + M̃ + FF(M' + M̃))
    F  = GELU(LN([V'', M''] W_f + b))
    w  = softmax_s(mlp(F_s)),  z = Σ_s w_s F_s
"""

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from app.errors import ConfigurationError
from app.network.Attention import FeedForward, MultiHeadAttention, init_linear


class FusionOutput(NamedTuple):
    fused: Tensor
    pool_weights: Tensor
    series_embedding: Tensor


class BidirectionalCrossAttention(nn.Module):

    def __init__(self, visual_dim: int = 256, metadata_dim: int = 128, dim: int = 256,
                 out_dim: int = 128, heads: int = 4, ff_expansion: int = 4):
        super().__init__()
        self.visual_proj = init_linear(nn.Linear(visual_dim, dim))
        self.metadata_proj = init_linear(nn.Linear(metadata_dim, dim))

        self.visual_attn = MultiHeadAttention(dim, heads)
        self.visual_ff = FeedForward(dim, ff_expansion)
        self.visual_norm = nn.LayerNorm(dim, eps=1e-5)

        self.metadata_attn = MultiHeadAttention(dim, heads)
        self.metadata_ff = FeedForward(dim, ff_expansion)
        self.metadata_norm = nn.LayerNorm(dim, eps=1e-5)

        self.fuse = init_linear(nn.Linear(2 * dim, out_dim))
        self.fuse_norm = nn.LayerNorm(out_dim, eps=1e-5)

    def forward(self, visual: Tensor, metadata: Tensor) -> Tensor:
        if visual.shape[:-1] != metadata.shape[:-1]:
            raise ConfigurationError(
                f"visual tokens {tuple(visual.shape)} and metadata embeddings {tuple(metadata.shape)} "
                "must share batch and slice dimensions"
            )
        if visual.shape[-1] != self.visual_proj.in_features or metadata.shape[-1] != self.metadata_proj.in_features:
            raise ConfigurationError(
                f"fusion expects widths ({self.visual_proj.in_features}, {self.metadata_proj.in_features}), "
                f"got ({visual.shape[-1]}, {metadata.shape[-1]})"
            )
        v = self.visual_proj(visual)
        m = self.metadata_proj(metadata)

        v_att, _ = self.visual_attn(v, m, m)
        v_res = v_att + v
        v_out = self.visual_norm(v_res + self.visual_ff(v_res))

        m_att, _ = self.metadata_attn(m, v, v)
        m_res = m_att + m
        m_out = self.metadata_norm(m_res + self.metadata_ff(m_res))

        return F.gelu(self.fuse_norm(self.fuse(torch.cat([v_out, m_out], dim=-1))))


class AttentionPooling(nn.Module):
    """Softmax over per-slice MLP scores; z is the weighted sum of fused rows"""

    def __init__(self, dim: int = 128, hidden: int = 64):
        super().__init__()
        self.score = nn.Sequential(
            init_linear(nn.Linear(dim, hidden)),
            nn.GELU(),
            init_linear(nn.Linear(hidden, 1)),
        )

    def forward(self, fused: Tensor) -> FusionOutput:
        weights = torch.softmax(self.score(fused).squeeze(-1), dim=-1)
        z = (weights.unsqueeze(-1) * fused).sum(dim=-2)
        return FusionOutput(fused=fused, pool_weights=weights, series_embedding=z)
