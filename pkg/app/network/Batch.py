from typing import Dict, List, Optional, Sequence, TypedDict

import numpy as np
import torch

from app.models import SeriesSample
from app.services.labels import LabelSchema, encode_targets


class SeriesBatch(TypedDict, total=False):
    # Model inputs
    images: torch.Tensor            # (B, S, 224, 224) float
    values: torch.Tensor            # (B, S, F) float, 0 where mask is False
    mask: torch.Tensor              # (B, S, F) bool, True = observed

    # Targets (absent at prediction time)
    targets: Dict[str, torch.Tensor]

    # Provenance
    series_uids: List[str]
    patient_ids: List[str]
    slice_indices: List[List[int]]


def collate_samples(samples: Sequence[SeriesSample], label_schema: Optional[LabelSchema] = None,
                    dtype: torch.dtype = torch.float32) -> SeriesBatch:
    """Stack SeriesSamples that share S and F into one batch"""
    values = np.stack([s.table.values for s in samples])
    batch: SeriesBatch = {
        "images": torch.as_tensor(np.stack([s.images.data for s in samples]), dtype=dtype),
        "values": torch.as_tensor(np.nan_to_num(values, nan=0.0), dtype=dtype),
        "mask": torch.as_tensor(np.stack([s.table.mask for s in samples]), dtype=torch.bool),
        "series_uids": [s.series_uid for s in samples],
        "patient_ids": [s.patient_id for s in samples],
        "slice_indices": [list(s.images.slice_indices) for s in samples],
    }
    if label_schema is not None and all(s.label is not None for s in samples):
        batch["targets"] = encode_targets([s.label for s in samples], label_schema)
    return batch
