"""
Multi-head attention written out explicitly so the per-head attention matrices
are available to callers (the pooled-attention printout and the invariant tests use them).
"""

import math
from typing import Tuple

import torch
from torch import Tensor, nn

from app.errors import ConfigurationError

INIT_STD = 0.02


def init_linear(layer: nn.Linear, std: float = INIT_STD) -> nn.Linear:
    """Gaussian weights, zero bias"""
    nn.init.normal_(layer.weight, mean=0.0, std=std)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


class MultiHeadAttention(nn.Module):
    """
    Scaled dot-product attention over `heads` heads with learned Q/K/V/output projections.

    Inputs are (..., n, dim) queries and (..., m, dim) keys/values; any leading batch
    dimensions are carried through.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"attention width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads

        self.q_proj = init_linear(nn.Linear(dim, dim))
        self.k_proj = init_linear(nn.Linear(dim, dim))
        self.v_proj = init_linear(nn.Linear(dim, dim))
        self.out_proj = init_linear(nn.Linear(dim, dim))

    def _split(self, x: Tensor) -> Tensor:
        # (..., n, dim) -> (..., heads, n, head_dim)
        x = x.reshape(*x.shape[:-1], self.heads, self.head_dim)
        return x.transpose(-3, -2)

    def forward(self, query: Tensor, key: Tensor, value: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            (output of shape (..., n, dim), attention weights of shape (..., heads, n, m))
        """
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.shape[-1] != self.dim:
                raise ConfigurationError(f"{name} width {t.shape[-1]} does not match attention width {self.dim}")
        if key.shape[:-1] != value.shape[:-1]:
            raise ConfigurationError(f"key shape {tuple(key.shape)} and value shape {tuple(value.shape)} disagree")

        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))

        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)
        context = (weights @ v).transpose(-3, -2)
        context = context.reshape(*context.shape[:-2], self.dim)
        return self.out_proj(context), weights


class FeedForward(nn.Module):
    """Single hidden layer, GELU"""

    def __init__(self, dim: int, expansion: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            init_linear(nn.Linear(dim, dim * expansion)),
            nn.GELU(),
            init_linear(nn.Linear(dim * expansion, dim)),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)
