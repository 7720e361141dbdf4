"""
Full multimodal series classifier and the pieces every model variant shares
(heads, output container, single-sample forward).
"""

import logging
from typing import Dict, NamedTuple, Optional

import torch
from torch import Tensor, nn

from app.config import ModelConfig
from app.errors import NumericError, SchemaMismatchError
from app.models import SeriesSample
from app.network.Attention import init_linear
from app.network.Batch import SeriesBatch, collate_samples
from app.network.CrossModalFusion import AttentionPooling, BidirectionalCrossAttention
from app.network.SparseMetadataEncoder import SparseMetadataEncoder
from app.network.VisualPathway import VisualPathway, build_backbone
from app.services.labels import LabelSchema

logger = logging.getLogger(__name__)


class ModelOutput(NamedTuple):
    logits: Dict[str, Tensor]
    pool_weights: Optional[Tensor]


class ClassificationHeads(nn.Module):
    """One linear layer per head on the series embedding"""

    def __init__(self, in_dim: int, label_schema: LabelSchema):
        super().__init__()
        self.layers = nn.ModuleDict({
            spec.name: init_linear(nn.Linear(in_dim, spec.size)) for spec in label_schema.heads
        })

    def forward(self, z: Tensor) -> Dict[str, Tensor]:
        return {name: layer(z) for name, layer in self.layers.items()}


class SeriesModel(nn.Module):
    """
    Common contract of the full model and the ablation baselines:
    forward(batch) -> ModelOutput, plus the identifiers a checkpoint records.
    """
    variant: str = ""

    def __init__(self, feature_count: int, label_schema: LabelSchema):
        super().__init__()
        self.feature_count = feature_count
        self.label_schema = label_schema
        self.schema_fingerprint = ""

    @property
    def backbone_id(self) -> str:
        return "none"

    def check_finite(self, logits: Dict[str, Tensor]) -> Dict[str, Tensor]:
        for name, block in logits.items():
            if not torch.isfinite(block).all():
                raise NumericError(f"non-finite logits in head '{name}'")
        return logits


class SeriesClassifier(SeriesModel):
    """visual path + SME -> bi-directional cross attention -> pooling -> heads"""
    variant = "none"

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
        self.metadata = SparseMetadataEncoder(feature_count, config.dictionary_dim, config.metadata_dim)
        self.fusion = BidirectionalCrossAttention(
            visual_dim=config.visual_dim,
            metadata_dim=config.metadata_dim,
            dim=config.fusion_dim,
            out_dim=config.output_dim,
            heads=config.heads,
            ff_expansion=config.ff_expansion,
        )
        self.pool = AttentionPooling(config.output_dim, config.pool_hidden)
        self.heads = ClassificationHeads(config.output_dim, label_schema)

    @property
    def backbone_id(self) -> str:
        return self.visual.backbone_id

    def forward(self, batch: SeriesBatch) -> ModelOutput:
        visual = self.visual(batch["images"])
        metadata = self.metadata(batch["values"], batch["mask"])
        pooled = self.pool(self.fusion(visual, metadata))
        logits = self.check_finite(self.heads(pooled.series_embedding))
        return ModelOutput(logits=logits, pool_weights=pooled.pool_weights)


def model_forward(sample: SeriesSample, model: SeriesModel) -> ModelOutput:
    """Inference on a single sample (eval mode, no gradients)"""
    if model.schema_fingerprint and sample.table.schema_fingerprint != model.schema_fingerprint:
        raise SchemaMismatchError(
            f"sample was built with schema {sample.table.schema_fingerprint[:12]}, "
            f"model expects {model.schema_fingerprint[:12]}"
        )
    dtype = next(model.parameters()).dtype
    batch = collate_samples([sample], dtype=dtype)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(batch)
    finally:
        model.train(was_training)
