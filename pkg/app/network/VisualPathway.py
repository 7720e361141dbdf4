"""
Visual path: per-slice 2D backbone -> projection to d_v -> cross-slice self-attention.
"""

import logging
from typing import Dict, Tuple, Type

import torch
from torch import Tensor, nn

from app.errors import ConfigurationError
from app.network.Attention import INIT_STD, FeedForward, MultiHeadAttention, init_linear

logger = logging.getLogger(__name__)


class SliceBackbone(nn.Module):
    """
    Interface for per-slice encoders: (N, 1, H, W) -> (N, output_dim).
    Implementations must keep slices independent of each other (no batch statistics in training).
    """
    identifier: str = ""
    output_dim: int = 0


class SmallCNNBackbone(SliceBackbone):
    """Four stride-2 conv stages (16/32/64/128 channels) and global average pooling"""
    identifier = "small_cnn"
    output_dim = 128

    def __init__(self, channels: Tuple[int, ...] = (16, 32, 64, 128)):
        super().__init__()
        layers = []
        in_ch = 1
        for out_ch in channels:
            layers += [
                nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(min(8, out_ch), out_ch),
                nn.GELU(),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.output_dim = channels[-1]

    def forward(self, x: Tensor) -> Tensor:
        return self.pool(self.features(x)).flatten(1)


class DenseNet121Backbone(SliceBackbone):
    """torchvision DenseNet121 (random init) with a single-channel stem"""
    identifier = "densenet121"
    output_dim = 1024

    def __init__(self):
        super().__init__()
        from torchvision.models import densenet121

        net = densenet121(weights=None)
        net.features.conv0 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
        net.classifier = nn.Identity()
        self.net = net

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


BACKBONES: Dict[str, Type[SliceBackbone]] = {
    SmallCNNBackbone.identifier: SmallCNNBackbone,
    DenseNet121Backbone.identifier: DenseNet121Backbone,
}


def build_backbone(identifier: str) -> SliceBackbone:
    if identifier not in BACKBONES:
        raise ConfigurationError(f"Unknown backbone '{identifier}'. Available: {sorted(BACKBONES)}")
    return BACKBONES[identifier]()


class SliceEncoder(nn.Module):
    """Row s of the output is proj(backbone(plane s)); planes are encoded independently."""

    def __init__(self, backbone: SliceBackbone, visual_dim: int = 256):
        super().__init__()
        self.backbone = backbone
        self.proj = init_linear(nn.Linear(backbone.output_dim, visual_dim))

    def forward(self, images: Tensor) -> Tensor:
        """(..., S, H, W) -> (..., S, d_v)"""
        lead = images.shape[:-2]
        flat = images.reshape(-1, 1, *images.shape[-2:])
        features = self.backbone(flat)
        if features.shape[-1] != self.proj.in_features:
            raise ConfigurationError(
                f"backbone '{self.backbone.identifier}' emitted {features.shape[-1]} features, "
                f"projection expects {self.proj.in_features}"
            )
        return self.proj(features).reshape(*lead, -1)


class CrossSliceAttention(nn.Module):
    """
    Optional learned positional embedding, then one post-norm transformer block:
    LN(x + MHA(x)) followed by LN(h + FF(h)).
    """

    def __init__(self, dim: int = 256, heads: int = 4, ff_expansion: int = 4,
                 max_slices: int = 64, use_positional: bool = True):
        super().__init__()
        self.max_slices = max_slices
        self.use_positional = use_positional
        self.positional = nn.Parameter(torch.randn(max_slices, dim) * INIT_STD)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim, eps=1e-5)
        self.ff = FeedForward(dim, ff_expansion)
        self.norm2 = nn.LayerNorm(dim, eps=1e-5)

    def forward(self, tokens: Tensor) -> Tuple[Tensor, Tensor]:
        S = tokens.shape[-2]
        if self.use_positional:
            if S > self.max_slices:
                raise ConfigurationError(f"{S} slices exceed the positional table of {self.max_slices}")
            tokens = tokens + self.positional[:S]
        attended, weights = self.attn(tokens, tokens, tokens)
        h = self.norm1(tokens + attended)
        return self.norm2(h + self.ff(h)), weights


class VisualPathway(nn.Module):

    def __init__(self, backbone: SliceBackbone, visual_dim: int = 256, heads: int = 4,
                 ff_expansion: int = 4, max_slices: int = 64, use_positional: bool = True):
        super().__init__()
        self.encoder = SliceEncoder(backbone, visual_dim)
        self.cross_slice = CrossSliceAttention(visual_dim, heads, ff_expansion, max_slices, use_positional)

    @property
    def backbone_id(self) -> str:
        return self.encoder.backbone.identifier

    def forward(self, images: Tensor) -> Tensor:
        tokens, _ = self.cross_slice(self.encoder(images))
        return tokens
