import logging

from app.config import BaselineName, ModelConfig
from app.errors import ConfigurationError
from app.network.Baselines import ConcatBaseline, ImageOnlyClassifier, MetadataOnlyClassifier
from app.network.SeriesClassifier import SeriesClassifier, SeriesModel
from app.services.labels import LabelSchema

logger = logging.getLogger(__name__)


def build_model(config: ModelConfig, baseline: BaselineName, feature_count: int,
                label_schema: LabelSchema) -> SeriesModel:
    """Instantiate the full model or one of the ablation baselines"""
    if baseline == "none":
        model = SeriesClassifier(config, feature_count, label_schema)
    elif baseline == "concat-zero":
        model = ConcatBaseline(config, feature_count, label_schema, imputer="zero")
    elif baseline == "concat-learned":
        model = ConcatBaseline(config, feature_count, label_schema, imputer="learned")
    elif baseline == "image-only":
        model = ImageOnlyClassifier(config, feature_count, label_schema)
    elif baseline == "metadata-only":
        model = MetadataOnlyClassifier(config, feature_count, label_schema)
    else:
        raise ConfigurationError(f"Unknown baseline '{baseline}'")

    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Built {type(model).__name__} ({model.variant}, backbone={model.backbone_id}): {n_params:,} parameters")
    return model
