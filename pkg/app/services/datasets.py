"""
Labeled series collections and the torch Dataset used for training and evaluation.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from torch.utils.data import Dataset

from app.errors import ConfigurationError, DicomDecodeError, LabelError
from app.models import SeriesSample, SliceSource, TagMap, WarningTally
from app.services.dicom_ingest import load_series, scan_and_group
from app.services.labels import JOINT_CLASSES
from app.services.metadata_schema import TagSchema

logger = logging.getLogger(__name__)

REQUIRED_LABEL_COLUMNS = ("series_uid", "label")


@dataclass
class LabeledSeries:
    sources: List[SliceSource]
    labels: List[int]
    class_names: List[str]

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def patient_ids(self) -> List[str]:
        return [s.patient_id for s in self.sources]

    def subset(self, indices: Sequence[int]) -> "LabeledSeries":
        return LabeledSeries(
            sources=[self.sources[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            class_names=self.class_names,
        )


def class_names_from_frame(frame: pd.DataFrame) -> List[str]:
    """Class order: label_index when given, the joint vocabulary when it matches, else sorted names"""
    names = sorted(frame["label"].astype(str).unique())
    if "label_index" in frame.columns:
        pairs = frame[["label_index", "label"]].drop_duplicates()
        if pairs["label_index"].duplicated().any() or pairs["label"].duplicated().any():
            raise LabelError("labels file maps a label_index to more than one label name")
        ordered = pairs.sort_values("label_index")
        if list(ordered["label_index"]) != list(range(len(ordered))):
            raise LabelError("label_index values must be 0..C-1")
        return [str(x) for x in ordered["label"]]
    if set(names) <= set(JOINT_CLASSES):
        return list(JOINT_CLASSES)
    return names


def read_labels(labels_file: Path) -> pd.DataFrame:
    labels_file = Path(labels_file)
    if not labels_file.is_file():
        raise ConfigurationError(f"Labels file not found: {labels_file}")
    frame = pd.read_csv(labels_file, dtype={"series_uid": str, "patient_id": str, "label": str})
    missing = [c for c in REQUIRED_LABEL_COLUMNS if c not in frame.columns]
    if missing:
        raise LabelError(f"{labels_file} lacks columns {missing}")
    return frame


def load_labeled_root(data_root: Path, labels_file: Optional[Path], workers: int = 1,
                      class_names: Optional[List[str]] = None) -> Tuple[LabeledSeries, WarningTally]:
    """
    Scan a DICOM root and attach labels from the labels table. Series without a label are
    skipped (tallied); labels outside `class_names` (when given) are an error.
    """
    records, tally = scan_and_group(Path(data_root), workers=workers)
    if not records:
        raise ConfigurationError(f"No DICOM series found under {data_root}")

    labels_file = labels_file or Path(data_root) / "labels.csv"
    frame = read_labels(labels_file)
    names = class_names or class_names_from_frame(frame)
    lookup: Dict[str, str] = dict(zip(frame["series_uid"], frame["label"].astype(str)))

    sources: List[SliceSource] = []
    labels: List[int] = []
    for record in records:
        if record.series_uid not in lookup:
            tally.add("unlabeled_series")
            continue
        name = lookup[record.series_uid]
        if name not in names:
            raise LabelError(f"series {record.series_uid}: label '{name}' not in {names}")
        sources.append(record)
        labels.append(names.index(name))

    if tally.counts.get("unlabeled_series"):
        logger.warning(f"⚠️  {tally.counts['unlabeled_series']} series have no label and were skipped")
    logger.info(f"📊 {len(sources)} labeled series, {len(names)} classes from {data_root}")
    return LabeledSeries(sources=sources, labels=labels, class_names=names), tally


class SeriesDataset(Dataset):
    """
    torch Dataset over labeled sources. Decodable slice indices are cached per series after
    the first load so later epochs only read the sampled slices.
    """

    def __init__(self, series: LabeledSeries, S: int, schema: TagSchema):
        self.series = series
        self.S = S
        self.schema = schema
        self._valid: Dict[int, List[int]] = {}
        self.warnings = WarningTally()

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, index: int) -> SeriesSample:
        source = self.series.sources[index]
        sample, valid = load_series(source, self.S, self.schema, self._valid.get(index))
        if index not in self._valid:
            self._valid[index] = valid
            self.warnings.merge(sample.warnings)
            self.warnings.merge(sample.table.warnings)
        return replace(sample, label=self.series.labels[index])


def collect_tag_maps(sources: Sequence[SliceSource], keywords: Sequence[str]) -> List[TagMap]:
    """Tag map of the centre slice of every source; undecodable centre slices are skipped"""
    tag_maps: List[TagMap] = []
    for source in sources:
        try:
            _, tag_map = source.read_slice((source.num_slices - 1) // 2, keywords)
        except DicomDecodeError as e:
            logger.warning(f"⚠️  {source.series_uid}: centre slice unreadable for normalization ({e})")
            continue
        tag_maps.append(tag_map)
    return tag_maps
