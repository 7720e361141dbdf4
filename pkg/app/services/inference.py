"""
Single-series prediction with a restored checkpoint.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import torch

from app.models import SeriesSample
from app.network.SeriesClassifier import SeriesModel, model_forward
from app.services.labels import LabelSchema

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeriesPrediction:
    series_uid: str
    labels: Dict[str, object]           # head -> class name (softmax/binary) or list of names (flags)
    probabilities: Dict[str, List[float]]
    pool_weights: Optional[List[float]]
    slice_indices: List[int]


def predict_sample(model: SeriesModel, sample: SeriesSample, label_schema: LabelSchema) -> SeriesPrediction:
    output = model_forward(sample, model)
    labels: Dict[str, object] = {}
    probabilities: Dict[str, List[float]] = {}
    for spec in label_schema.heads:
        block = output.logits[spec.name][0]
        if spec.kind == "softmax":
            probs = torch.softmax(block, dim=-1)
            labels[spec.name] = spec.classes[int(probs.argmax())]
        elif spec.kind == "binary":
            probs = torch.sigmoid(block)
            labels[spec.name] = spec.classes[int(probs[0] > 0.5)]
        else:
            probs = torch.sigmoid(block)
            labels[spec.name] = [c for c, p in zip(spec.classes, probs.tolist()) if p > 0.5]
        probabilities[spec.name] = [float(p) for p in probs.reshape(-1)]

    weights = output.pool_weights[0].tolist() if output.pool_weights is not None else None
    return SeriesPrediction(
        series_uid=sample.series_uid,
        labels=labels,
        probabilities=probabilities,
        pool_weights=weights,
        slice_indices=list(sample.images.slice_indices),
    )


def format_prediction(prediction: SeriesPrediction) -> str:
    lines = [f"series {prediction.series_uid}"]
    for head, label in prediction.labels.items():
        shown = ", ".join(label) if isinstance(label, list) else label
        lines.append(f"  {head}: {shown or '-'}")
    if prediction.pool_weights is None:
        lines.append("  pool weights: n/a (model has no attention pooling)")
    else:
        lines.append(f"  pool weights (sum={sum(prediction.pool_weights):.6f}):")
        for index, weight in zip(prediction.slice_indices, prediction.pool_weights):
            lines.append(f"    slice {index:4d}: {weight:.6f}")
    return "\n".join(lines)
