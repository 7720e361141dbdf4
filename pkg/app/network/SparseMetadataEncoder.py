"""
Sparse Metadata Encoder.

Each observed (feature index, value) pair of a slice is embedded as its dictionary row e_f,
modulated by FiLM parameters predicted from [value, e_f], averaged over the observed set,
refined by a residual MLP and projected to the metadata width. Missing entries are never
read; a slice with no observed feature uses a learned null embedding.
"""

import logging
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from app.errors import NumericError, SchemaMismatchError
from app.models import FeatureTable, SparseRow
from app.network.Attention import INIT_STD, init_linear

logger = logging.getLogger(__name__)


class FiLMValueNet(nn.Module):
    """g(v, e_f) -> (alpha, beta). The last layer starts at zero so modulation starts as identity."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.hidden = init_linear(nn.Linear(1 + dim, 2 * dim))
        self.act = nn.GELU()
        self.out = nn.Linear(2 * dim, 2 * dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, values: Tensor, embeddings: Tensor):
        h = torch.cat([values.unsqueeze(-1), embeddings], dim=-1)
        alpha, beta = self.out(self.act(self.hidden(h))).chunk(2, dim=-1)
        return alpha, beta


class SparseMetadataEncoder(nn.Module):

    def __init__(self, feature_count: int, dim: int = 64, out_dim: int = 128):
        super().__init__()
        if feature_count < 1:
            raise SchemaMismatchError(f"feature dictionary needs at least one row, got F={feature_count}")
        self.feature_count = feature_count
        self.dim = dim
        self.out_dim = out_dim

        self.dictionary = nn.Parameter(torch.randn(feature_count, dim) * INIT_STD)
        self.value_net = FiLMValueNet(dim)
        self.null_embedding = nn.Parameter(torch.randn(dim) * INIT_STD)
        self.refine = nn.Sequential(
            init_linear(nn.Linear(dim, dim)),
            nn.GELU(),
            init_linear(nn.Linear(dim, dim)),
        )
        self.norm = nn.LayerNorm(dim, eps=1e-5)
        self.out_proj = init_linear(nn.Linear(dim, out_dim))

    # ------------------------------------------------------------------
    # building blocks
    # ------------------------------------------------------------------

    def film_modulate(self, embeddings: Tensor, values: Tensor) -> Tensor:
        """e * (1 + alpha) + beta with (alpha, beta) = value_net([v, e])"""
        alpha, beta = self.value_net(values, embeddings)
        return embeddings * (1 + alpha) + beta

    def _check_finite(self, modulated: Tensor, observed: Tensor, feature_index: Tensor) -> None:
        bad = ~torch.isfinite(modulated).all(dim=-1) & observed
        if bad.any():
            first = int(feature_index.expand_as(bad)[bad][0])
            raise NumericError(f"FiLM produced a non-finite embedding for feature index {first}")

    def _finish(self, pooled: Tensor) -> Tensor:
        x = pooled + self.refine(pooled)
        return self.out_proj(self.norm(x))

    # ------------------------------------------------------------------
    # forward paths
    # ------------------------------------------------------------------

    def forward(self, values: Tensor, mask: Tensor) -> Tensor:
        """
        Args:
            values: (..., S, F) metadata values; entries where mask is False are ignored
            mask: (..., S, F) boolean, True = observed
        Returns:
            (..., S, out_dim) metadata embeddings
        """
        if values.shape[-1] != self.feature_count:
            raise SchemaMismatchError(
                f"metadata table has {values.shape[-1]} columns, dictionary has {self.feature_count} rows"
            )
        mask = mask.bool()
        safe = torch.where(mask, values, torch.zeros_like(values))
        embeddings = self.dictionary.expand(*values.shape, self.dim)
        modulated = self.film_modulate(embeddings, safe)
        self._check_finite(modulated, mask, torch.arange(self.feature_count, device=values.device))

        weight = mask.to(modulated.dtype).unsqueeze(-1)
        count = weight.sum(dim=-2)
        summed = (modulated * weight).sum(dim=-2)
        pooled = torch.where(count > 0, summed / count.clamp_min(1.0), self.null_embedding.expand_as(summed))
        return self._finish(pooled)

    def encode_row(self, row: SparseRow) -> Tensor:
        """Embedding of one slice from its observed pairs. Pair order does not matter."""
        pairs = sorted(row.pairs)
        if any(i < 0 or i >= self.feature_count for i, _ in pairs):
            bad = [i for i, _ in pairs if i < 0 or i >= self.feature_count]
            raise SchemaMismatchError(f"feature index {bad[0]} outside dictionary of {self.feature_count} rows")
        if not pairs:
            return self._finish(self.null_embedding)

        index = torch.tensor([i for i, _ in pairs], dtype=torch.long, device=self.dictionary.device)
        values = torch.tensor([v for _, v in pairs], dtype=self.dictionary.dtype, device=self.dictionary.device)
        modulated = self.film_modulate(self.dictionary[index], values)
        self._check_finite(modulated, torch.ones_like(index, dtype=torch.bool), index)
        return self._finish(modulated.mean(dim=0))

    def encode_table(self, table: FeatureTable) -> Tensor:
        """(S, out_dim) embeddings of a FeatureTable"""
        values = torch.as_tensor(np.nan_to_num(table.values, nan=0.0), dtype=self.dictionary.dtype)
        mask = torch.as_tensor(table.mask, dtype=torch.bool)
        return self.forward(values, mask)
