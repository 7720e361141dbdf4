"""
Synthetic DICOM-like datasets with controllable signal placement and metadata missingness.

Signal modes:
    image_only      class = texture (oriented grating); headers are uninformative
    metadata_only   class = value of the class-carrying tag; images are noise
    joint           class = 4 * tag_code + texture, so neither modality alone decides it
    mid_slice_only  texture only on slices at relative positions [0.4, 0.6]
    off_center      texture only on slices at relative positions [0.6, 0.8]

Everything is derived from the recipe seed; series and slices draw from their own
seeded streams so generation is reproducible and order independent.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydicom.datadict import dictionary_VM, dictionary_VR
from pydicom.dataset import FileDataset, FileMetaDataset
from pydicom.uid import ExplicitVRLittleEndian, MRImageStorage, generate_uid
from tqdm import tqdm

from app.errors import SynthSpecError
from app.models import SeriesSample, SynthSpec, TagMap
from app.services.datasets import LabeledSeries
from app.services.dicom_ingest import load_series
from app.services.labels import JOINT_CLASSES, LabelSchema
from app.services.metadata_schema import TagSchema, reference_schema

logger = logging.getLogger(__name__)

CLASS_TAG = "ManufacturerModelName"
LABELS_FILE = "labels.csv"
JOINT_TEXTURES = 4
FREQUENCIES = (3.0, 6.0, 10.0, 15.0)
MAX_TEXTURES = 4 * len(FREQUENCIES)
RESCALE_INTERCEPT = -1024.0
MAX_STORED = 4095
SIGNAL_WINDOWS = {"mid_slice_only": (0.4, 0.6), "off_center": (0.6, 0.8)}
ORIENTATIONS = {
    "AX": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    "COR": [1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
    "SAG": [0.0, 1.0, 0.0, 0.0, 0.0, -1.0],
}


# ============================================================================
# SERIES
# ============================================================================

@dataclass(frozen=True)
class SyntheticSeries:
    """A rendered-on-demand series; implements the SliceSource protocol"""
    series_uid: str
    patient_id: str
    label: int
    label_name: str
    series_index: int
    n_slices: int
    texture: Optional[int]
    signal_window: Optional[Tuple[float, float]]
    header: TagMap
    positions: Tuple[Tuple[float, float, float], ...]
    matrix_size: int
    noise_level: float
    seed: int

    @property
    def num_slices(self) -> int:
        return self.n_slices

    def relative_position(self, index: int) -> float:
        return 0.5 if self.n_slices == 1 else index / (self.n_slices - 1)

    def has_signal(self, index: int) -> bool:
        if self.texture is None:
            return False
        if self.signal_window is None:
            return True
        lo, hi = self.signal_window
        return lo <= self.relative_position(index) <= hi

    def stored_pixels(self, index: int) -> np.ndarray:
        """Integer pixel values as written to PixelData"""
        rng = np.random.default_rng([self.seed, self.series_index, index, 7])
        n = self.matrix_size
        yy, xx = np.mgrid[-1.0:1.0:complex(0, n), -1.0:1.0:complex(0, n)]
        body = ((xx / 0.85) ** 2 + (yy / 0.9) ** 2 <= 1.0).astype(np.float64)
        image = 0.3 * body

        for _ in range(3):
            cx, cy = rng.uniform(-0.6, 0.6, size=2)
            radius = rng.uniform(0.05, 0.2)
            image += 0.15 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2))

        if self.has_signal(index):
            angle = (self.texture % 4) * math.pi / 4
            frequency = FREQUENCIES[self.texture // 4]
            phase = rng.uniform(0, 2 * math.pi)
            grating = np.sin(math.pi * frequency * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
            image += 0.5 * grating * body

        image += self.noise_level * rng.standard_normal((n, n))
        return np.clip(np.rint((image + 1.0) * 1000.0), 0, MAX_STORED).astype(np.uint16)

    def read_slice(self, index: int, keywords: Sequence[str]) -> Tuple[np.ndarray, TagMap]:
        pixels = self.stored_pixels(index).astype(np.float64) + RESCALE_INTERCEPT
        return pixels, {k: self.header[k] for k in keywords if k in self.header}


@dataclass
class SyntheticDataset:
    spec: SynthSpec
    series: List[SyntheticSeries]
    class_names: List[str]
    tag_schema: TagSchema
    label_schema: LabelSchema = field(init=False)

    def __post_init__(self):
        self.label_schema = LabelSchema.joint(self.class_names)

    def __len__(self) -> int:
        return len(self.series)

    @property
    def labels(self) -> List[int]:
        return [s.label for s in self.series]

    @property
    def patient_ids(self) -> List[str]:
        return [s.patient_id for s in self.series]

    def to_labeled(self) -> LabeledSeries:
        return LabeledSeries(sources=list(self.series), labels=self.labels, class_names=list(self.class_names))

    def samples(self, S: int) -> List[SeriesSample]:
        return [load_series(s, S, self.tag_schema)[0] for s in self.series]

    def label_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "series_uid": [s.series_uid for s in self.series],
            "patient_id": [s.patient_id for s in self.series],
            "label": [s.label_name for s in self.series],
            "label_index": [s.label for s in self.series],
        })


# ============================================================================
# SPEC VALIDATION
# ============================================================================

def class_tag_missingness(spec: SynthSpec) -> float:
    if spec.class_tag_missingness is not None:
        return spec.class_tag_missingness
    if spec.signal_mode == "metadata_only":
        return 0.0
    return spec.missingness_rate


def class_names_for(n_classes: int) -> List[str]:
    if n_classes == len(JOINT_CLASSES):
        return list(JOINT_CLASSES)
    return [f"class_{i:02d}" for i in range(n_classes)]


def validate_spec(spec: SynthSpec, schema: TagSchema) -> None:
    if spec.slices_min > spec.slices_max:
        raise SynthSpecError(f"slices_min ({spec.slices_min}) exceeds slices_max ({spec.slices_max})")
    if spec.signal_mode == "metadata_only" and class_tag_missingness(spec) >= 1.0:
        raise SynthSpecError("metadata_only with class_tag_missingness=1.0 removes the only class signal")

    class_entry = next((e for e in schema.entries if e.keyword == CLASS_TAG and e.kind == "categorical"), None)
    if spec.signal_mode in ("metadata_only", "joint") and class_entry is None:
        raise SynthSpecError(f"tag schema has no categorical {CLASS_TAG} entry to carry the class")
    vocab = len(class_entry.categories) if class_entry is not None else 0

    if spec.signal_mode == "metadata_only" and spec.n_classes > vocab:
        raise SynthSpecError(f"{spec.n_classes} classes exceed the {vocab} values of {CLASS_TAG}")
    if spec.signal_mode == "joint" and math.ceil(spec.n_classes / JOINT_TEXTURES) > vocab:
        raise SynthSpecError(f"{spec.n_classes} joint classes need more than {vocab} {CLASS_TAG} values")
    if spec.signal_mode in ("image_only", "mid_slice_only", "off_center") and spec.n_classes > MAX_TEXTURES:
        raise SynthSpecError(f"at most {MAX_TEXTURES} textures are available, got n_classes={spec.n_classes}")
    if spec.signal_mode in SIGNAL_WINDOWS and spec.slices_min < 6:
        raise SynthSpecError(f"{spec.signal_mode} needs at least 6 slices so a slice falls inside the signal window")


# ============================================================================
# HEADERS
# ============================================================================

def _continuous_value(keyword: str, mean: float, std: float, rng: np.random.Generator) -> Any:
    raw = abs(rng.normal(mean, 0.5 * std))
    vr = dictionary_VR(keyword)
    if vr == "IS":
        value: Any = int(round(raw))
    else:
        value = round(float(raw), 3)
    if dictionary_VM(keyword) not in ("1", ""):
        return [value, value]
    return value


def _flag_value(keyword: str, tokens: List[str], rng: np.random.Generator) -> Any:
    chosen = [t for t in tokens if rng.random() < 0.5]
    if dictionary_VM(keyword) == "1":
        return "*" + "_".join(t.lower() for t in chosen) + "2d1" if chosen else "*fl2d1"
    if len(chosen) > 1:
        return chosen
    return chosen[0] if chosen else "NONE"


def series_header(schema: TagSchema, rng: np.random.Generator, plane: str,
                  class_value: Optional[str]) -> TagMap:
    """Series-constant header values, in the form pydicom returns them after a read"""
    header: TagMap = {}
    tokens: Dict[str, List[str]] = {}
    for entry in schema.entries:
        keyword = entry.keyword
        if entry.kind == "categorical":
            if entry.derive == "orientation_plane":
                header[keyword] = list(ORIENTATIONS[plane])
            elif keyword == CLASS_TAG and class_value is not None:
                header[keyword] = class_value
            else:
                header[keyword] = str(rng.choice(entry.categories))
        elif entry.kind == "continuous":
            stats = entry.normalization
            header[keyword] = _continuous_value(keyword, stats.mean if stats else 1.0, stats.std if stats else 1.0, rng)
        elif entry.token is not None:
            tokens.setdefault(keyword, []).append(entry.token)
        else:
            header[keyword] = str(rng.choice(["Y", "N"]))
    for keyword, toks in tokens.items():
        header[keyword] = _flag_value(keyword, toks, rng)
    return header


def _slice_positions(header: TagMap, plane: str, n_slices: int,
                     rng: np.random.Generator) -> Tuple[Tuple[float, float, float], ...]:
    iop = np.asarray(ORIENTATIONS[plane])
    normal = np.cross(iop[:3], iop[3:])
    spacing = header.get("SpacingBetweenSlices", 5.0)
    spacing = float(spacing[0] if isinstance(spacing, list) else spacing) or 5.0
    origin = rng.uniform(-150.0, -50.0, size=3)
    return tuple(
        tuple(round(float(v), 3) for v in origin + i * spacing * normal)
        for i in range(n_slices)
    )


# ============================================================================
# GENERATION
# ============================================================================

def generate_dataset(spec: SynthSpec, schema: Optional[TagSchema] = None) -> SyntheticDataset:
    """
    Build a synthetic dataset. Class counts differ by at most one; each patient owns
    about `series_per_patient` series.
    """
    schema = schema or reference_schema()
    validate_spec(spec, schema)
    class_names = class_names_for(spec.n_classes)
    class_entry = next((e for e in schema.entries if e.keyword == CLASS_TAG and e.kind == "categorical"), None)

    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.n_series) % spec.n_classes)
    slice_counts = rng.integers(spec.slices_min, spec.slices_max + 1, size=spec.n_series)
    series_order = rng.permutation(spec.n_series)
    patient_of = np.empty(spec.n_series, dtype=int)
    patient_of[series_order] = np.arange(spec.n_series) // spec.series_per_patient

    class_missing = class_tag_missingness(spec)
    window = SIGNAL_WINDOWS.get(spec.signal_mode)

    series: List[SyntheticSeries] = []
    for i in range(spec.n_series):
        label = int(labels[i])
        header_rng = np.random.default_rng([spec.seed, i, 1])
        missing_rng = np.random.default_rng([spec.seed, i, 2])

        texture: Optional[int] = None
        class_value: Optional[str] = None
        if spec.signal_mode == "metadata_only":
            class_value = class_entry.categories[label]
        elif spec.signal_mode == "joint":
            texture = label % JOINT_TEXTURES
            class_value = class_entry.categories[label // JOINT_TEXTURES]
        else:
            texture = label

        plane = str(header_rng.choice(list(ORIENTATIONS)))
        header = series_header(schema, header_rng, plane, class_value)
        positions = _slice_positions(header, plane, int(slice_counts[i]), header_rng)

        for keyword in sorted(set(header)):
            rate = class_missing if keyword == CLASS_TAG else spec.missingness_rate
            if missing_rng.random() < rate:
                del header[keyword]

        series.append(SyntheticSeries(
            series_uid=generate_uid(entropy_srcs=["synthetic", str(spec.seed), "series", str(i)]),
            patient_id=f"SYN{int(patient_of[i]):05d}",
            label=label,
            label_name=class_names[label],
            series_index=i,
            n_slices=int(slice_counts[i]),
            texture=texture,
            signal_window=window,
            header=header,
            positions=positions,
            matrix_size=spec.matrix_size,
            noise_level=spec.noise_level,
            seed=spec.seed,
        ))

    n_patients = len(set(s.patient_id for s in series))
    logger.info(
        f"🧪 Synthetic dataset: {spec.n_series} series, {n_patients} patients, {spec.n_classes} classes, "
        f"mode={spec.signal_mode}, missingness={spec.missingness_rate:.2f}"
    )
    return SyntheticDataset(spec=spec, series=series, class_names=class_names, tag_schema=schema)


# ============================================================================
# WRITING
# ============================================================================

def _dicom_value(keyword: str, value: Any) -> Any:
    """Convert an in-memory header value to what pydicom should store"""
    vr = dictionary_VR(keyword)
    if vr == "DS":
        return [repr(float(v)) for v in value] if isinstance(value, list) else repr(float(value))
    return value


def _slice_dataset(series: SyntheticSeries, index: int, study_uid: str, path: Path) -> FileDataset:
    sop_uid = generate_uid(entropy_srcs=[series.series_uid, "slice", str(index)])
    meta = FileMetaDataset()
    meta.MediaStorageSOPClassUID = MRImageStorage
    meta.MediaStorageSOPInstanceUID = sop_uid
    meta.TransferSyntaxUID = ExplicitVRLittleEndian

    ds = FileDataset(str(path), {}, file_meta=meta, preamble=b"\0" * 128)
    ds.SOPClassUID = MRImageStorage
    ds.SOPInstanceUID = sop_uid
    ds.StudyInstanceUID = study_uid
    ds.SeriesInstanceUID = series.series_uid
    ds.PatientID = series.patient_id
    ds.PatientName = series.patient_id
    ds.Modality = "MR"
    ds.SeriesDescription = "SYNTHETIC"
    ds.InstanceNumber = index + 1
    ds.ImagePositionPatient = [repr(v) for v in series.positions[index]]

    for keyword, value in series.header.items():
        setattr(ds, keyword, _dicom_value(keyword, value))

    pixels = series.stored_pixels(index)
    ds.Rows, ds.Columns = pixels.shape
    ds.SamplesPerPixel = 1
    ds.PhotometricInterpretation = "MONOCHROME2"
    ds.BitsAllocated = 16
    ds.BitsStored = 12
    ds.HighBit = 11
    ds.PixelRepresentation = 0
    ds.RescaleIntercept = repr(RESCALE_INTERCEPT)
    ds.RescaleSlope = "1.0"
    ds.PixelData = pixels.astype("<u2").tobytes()
    return ds


def write_dicom_like(dataset: SyntheticDataset, out_dir: Path) -> Path:
    """
    Write one Part-10 file per slice (explicit VR little endian, native pixels) under
    out_dir/<patient>/<series>/ plus labels.csv. Missing header tags are not written at all.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_files = 0
    for series in tqdm(dataset.series, desc="Writing series", disable=len(dataset.series) < 50):
        series_dir = out_dir / series.patient_id / f"series_{series.series_index:05d}"
        series_dir.mkdir(parents=True, exist_ok=True)
        study_uid = generate_uid(entropy_srcs=["synthetic", str(series.seed), "study", series.patient_id])
        for index in range(series.num_slices):
            path = series_dir / f"slice_{index:03d}.dcm"
            _slice_dataset(series, index, study_uid, path).save_as(path, enforce_file_format=True)
            n_files += 1

    dataset.label_frame().to_csv(out_dir / LABELS_FILE, index=False)
    logger.info(f"✅ Wrote {n_files} files for {len(dataset.series)} series to {out_dir}")
    return out_dir
