"""
Ablation models sharing the SeriesModel contract:

  ConcatBaseline        dense metadata (zero or learned imputation) + mean visual tokens, concat, linear heads
  ImageOnlyClassifier   visual path only
  MetadataOnlyClassifier  SME + learnable pooling, no image path
"""

from typing import Literal

import torch
from torch import Tensor, nn

from app.config import ModelConfig
from app.models import SeriesSample
from app.network.Attention import init_linear
from app.network.Batch import SeriesBatch
from app.network.CrossModalFusion import AttentionPooling
from app.network.SeriesClassifier import ClassificationHeads, ModelOutput, SeriesModel, model_forward
from app.network.SparseMetadataEncoder import SparseMetadataEncoder
from app.network.VisualPathway import SliceEncoder, VisualPathway, build_backbone
from app.services.labels import LabelSchema


class ZeroImputer(nn.Module):

    def forward(self, values: Tensor, mask: Tensor) -> Tensor:
        return torch.where(mask, values, torch.zeros_like(values))


class LearnedImputer(nn.Module):
    """Missing entries = learnable per-feature baseline + MLP([observed values, mask]); observed entries pass through"""

    def __init__(self, feature_count: int, hidden: int = 128):
        super().__init__()
        self.baseline = nn.Parameter(torch.zeros(feature_count))
        self.net = nn.Sequential(
            init_linear(nn.Linear(2 * feature_count, hidden)),
            nn.GELU(),
            init_linear(nn.Linear(hidden, feature_count)),
        )

    def forward(self, values: Tensor, mask: Tensor) -> Tensor:
        observed = torch.where(mask, values, torch.zeros_like(values))
        predicted = self.baseline + self.net(torch.cat([observed, mask.to(values.dtype)], dim=-1))
        return torch.where(mask, values, predicted)


class ConcatBaseline(SeriesModel):

    def __init__(self, config: ModelConfig, feature_count: int, label_schema: LabelSchema,
                 imputer: Literal["zero", "learned"] = "zero"):
        super().__init__(feature_count, label_schema)
        self.variant = f"concat-{imputer}"
        self.imputer = ZeroImputer() if imputer == "zero" else LearnedImputer(feature_count, config.imputer_hidden)
        self.encoder = SliceEncoder(build_backbone(config.backbone), config.visual_dim)
        self.metadata_mlp = nn.Sequential(
            init_linear(nn.Linear(feature_count, config.imputer_hidden)),
            nn.GELU(),
            init_linear(nn.Linear(config.imputer_hidden, config.metadata_dim)),
        )
        self.heads = ClassificationHeads(config.visual_dim + config.metadata_dim, label_schema)

    @property
    def backbone_id(self) -> str:
        return self.encoder.backbone.identifier

    def fill(self, values: Tensor, mask: Tensor) -> Tensor:
        return self.imputer(values, mask)

    def forward(self, batch: SeriesBatch) -> ModelOutput:
        visual = self.encoder(batch["images"]).mean(dim=-2)
        dense = self.fill(batch["values"], batch["mask"])
        metadata = self.metadata_mlp(dense).mean(dim=-2)
        logits = self.check_finite(self.heads(torch.cat([visual, metadata], dim=-1)))
        return ModelOutput(logits=logits, pool_weights=None)


class ImageOnlyClassifier(SeriesModel):
    variant = "image-only"

    def __init__(self, config: ModelConfig, feature_count: int, label_schema: LabelSchema):
        super().__init__(feature_count, label_schema)
        self.visual = VisualPathway(
            build_backbone(config.backbone),
            visual_dim=config.visual_dim,
            heads=config.heads,
            ff_expansion=config.ff_expansion,
            max_slices=config.max_slices,
            use_positional=config.use_positional,
        )
        self.heads = ClassificationHeads(config.visual_dim, label_schema)

    @property
    def backbone_id(self) -> str:
        return self.visual.backbone_id

    def forward(self, batch: SeriesBatch) -> ModelOutput:
        z = self.visual(batch["images"]).mean(dim=-2)
        return ModelOutput(logits=self.check_finite(self.heads(z)), pool_weights=None)


class MetadataOnlyClassifier(SeriesModel):
    variant = "metadata-only"

    def __init__(self, config: ModelConfig, feature_count: int, label_schema: LabelSchema):
        super().__init__(feature_count, label_schema)
        self.metadata = SparseMetadataEncoder(feature_count, config.dictionary_dim, config.metadata_dim)
        self.pool = AttentionPooling(config.metadata_dim, config.pool_hidden)
        self.heads = ClassificationHeads(config.metadata_dim, label_schema)

    def forward(self, batch: SeriesBatch) -> ModelOutput:
        pooled = self.pool(self.metadata(batch["values"], batch["mask"]))
        logits = self.check_finite(self.heads(pooled.series_embedding))
        return ModelOutput(logits=logits, pool_weights=pooled.pool_weights)


def baseline_concat_forward(sample: SeriesSample, model: ConcatBaseline) -> ModelOutput:
    if not isinstance(model, ConcatBaseline):
        raise TypeError(f"expected a ConcatBaseline, got {type(model).__name__}")
    return model_forward(sample, model)


def image_only_forward(sample: SeriesSample, model: ImageOnlyClassifier) -> ModelOutput:
    if not isinstance(model, ImageOnlyClassifier):
        raise TypeError(f"expected an ImageOnlyClassifier, got {type(model).__name__}")
    return model_forward(sample, model)


def metadata_only_forward(sample: SeriesSample, model: MetadataOnlyClassifier) -> ModelOutput:
    if not isinstance(model, MetadataOnlyClassifier):
        raise TypeError(f"expected a MetadataOnlyClassifier, got {type(model).__name__}")
    return model_forward(sample, model)
