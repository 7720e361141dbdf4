"""
Data containers shared across services.

Tensor-carrying records are frozen dataclasses; declarative specs are pydantic models.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.errors import DicomDecodeError, UnsupportedTransferSyntaxError

TagMap = Dict[str, Any]
SignalMode = Literal["image_only", "metadata_only", "joint", "mid_slice_only", "off_center"]


class SliceSource(Protocol):
    """Anything load_series can sample from: a DICOM series on disk or a synthetic series."""
    series_uid: str
    patient_id: str

    @property
    def num_slices(self) -> int: ...

    def read_slice(self, index: int, keywords: Sequence[str]) -> Tuple[np.ndarray, TagMap]: ...


@dataclass(frozen=True)
class SliceRecord:
    file_path: Path
    series_uid: str
    instance_number: int
    position_along_normal: Optional[float]
    rows: int
    cols: int
    compressed_syntax: Optional[str] = None
    frames: int = 1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"Slice {self.file_path} has invalid matrix {self.rows}x{self.cols}")
        if not self.series_uid:
            raise ValueError(f"Slice {self.file_path} has an empty SeriesInstanceUID")


@dataclass(frozen=True)
class SeriesRecord:
    series_uid: str
    slices: Tuple[SliceRecord, ...]
    patient_id: str = ""

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    def read_slice(self, index: int, keywords: Sequence[str]) -> Tuple[np.ndarray, TagMap]:
        from app.services.dicom_ingest import read_slice_file
        return read_slice_file(self.slices[index].file_path, keywords)

    def header_failures(self) -> Dict[int, DicomDecodeError]:
        """Slices the header alone marks as undecodable (compressed syntax, multi-frame)"""
        rejected: Dict[int, DicomDecodeError] = {}
        for index, record in enumerate(self.slices):
            if record.compressed_syntax:
                rejected[index] = UnsupportedTransferSyntaxError(
                    f"{record.file_path}: compressed transfer syntax {record.compressed_syntax} is not supported"
                )
            elif record.frames > 1:
                rejected[index] = DicomDecodeError(
                    f"{record.file_path}: multi-frame objects are not supported ({record.frames} frames)"
                )
        return rejected


@dataclass(frozen=True)
class ImageStack:
    """S preprocessed planes of 224x224 and the source indices they were sampled from"""
    data: np.ndarray
    slice_indices: Tuple[int, ...]

    @property
    def num_slices(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class FeatureTable:
    """
    Per-slice metadata table (S x F).
    Missing entries hold NaN and have mask False; indicator columns are always observed.
    """
    values: np.ndarray
    mask: np.ndarray
    schema_fingerprint: str = ""
    warnings: Dict[str, int] = field(default_factory=dict)

    @property
    def num_slices(self) -> int:
        return int(self.values.shape[0])

    @property
    def feature_count(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class SparseRow:
    """Observed (feature_index, value) pairs of one slice; order carries no meaning"""
    pairs: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        indices = [i for i, _ in self.pairs]
        if len(set(indices)) != len(indices):
            raise ValueError("SparseRow feature indices must be unique")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class SeriesSample:
    """One training/inference unit"""
    images: ImageStack
    table: FeatureTable
    label: Optional[int]
    patient_id: str
    series_uid: str
    warnings: Dict[str, int] = field(default_factory=dict)


class SynthSpec(BaseModel):
    """Synthetic dataset recipe. Same JSON format as run configs."""
    n_series: int = Field(130, ge=1)
    n_classes: int = Field(13, ge=2)
    slices_min: int = Field(12, ge=1)
    slices_max: int = Field(30, ge=1)
    signal_mode: SignalMode = "joint"
    missingness_rate: float = Field(0.0, ge=0.0, lt=1.0)
    class_tag_missingness: Optional[float] = Field(None, ge=0.0, le=1.0)
    matrix_size: int = Field(160, ge=16)
    noise_level: float = Field(0.35, ge=0.0)
    series_per_patient: int = Field(2, ge=1)
    seed: int = 0


@dataclass
class WarningTally:
    """Counts of skipped files and unparseable values, keyed by reason"""
    counts: Dict[str, int] = field(default_factory=dict)

    def add(self, reason: str, n: int = 1) -> None:
        self.counts[reason] = self.counts.get(reason, 0) + n

    def merge(self, other: Dict[str, int]) -> None:
        for reason, n in other.items():
            self.add(reason, n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def as_list(self) -> List[Tuple[str, int]]:
        return sorted(self.counts.items())
