"""
DICOM ingestion: scan directories, group files into series, decode pixels,
sample S equidistant slices and build normalized image stacks.

Only native (uncompressed) transfer syntaxes are decoded; pydicom handles
explicit and implicit VR little endian element streams.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pydicom
from pydicom.dataset import Dataset
from pydicom.errors import InvalidDicomError
from pydicom.multival import MultiValue
from pydicom.valuerep import DSfloat, IS, PersonName

from app.errors import DicomDecodeError, UnsupportedTransferSyntaxError
from app.models import (
    ImageStack,
    SeriesRecord,
    SeriesSample,
    SliceRecord,
    SliceSource,
    TagMap,
    WarningTally,
)
from app.services.metadata_schema import TagSchema, build_feature_table

logger = logging.getLogger(__name__)

CROP_SIZE = 224
ZSCORE_EPS = 1e-8

_IGNORED_SUFFIXES = {".csv", ".json", ".txt", ".md", ".jsonl"}
_READ_ERRORS = (InvalidDicomError, OSError, EOFError, ValueError, KeyError, AttributeError, TypeError, IndexError)


# ============================================================================
# SCANNING & GROUPING
# ============================================================================

def position_along_normal(position: Any, orientation: Any) -> Optional[float]:
    """Project ImagePositionPatient onto the slice normal of ImageOrientationPatient (mm)"""
    try:
        ipp = np.asarray([float(v) for v in position], dtype=np.float64)
        iop = np.asarray([float(v) for v in orientation], dtype=np.float64)
    except (TypeError, ValueError):
        return None
    if ipp.shape != (3,) or iop.shape != (6,):
        return None
    normal = np.cross(iop[:3], iop[3:])
    if not np.any(normal):
        return None
    return float(np.dot(ipp, normal))


def read_header(path: Path) -> Optional[Tuple[SliceRecord, str]]:
    """Header-only read. Returns (SliceRecord, patient_id) or None if the file is not usable."""
    try:
        ds = pydicom.dcmread(str(path), stop_before_pixels=True)
        series_uid = str(ds.get("SeriesInstanceUID", "") or "")
        if not series_uid:
            return None
        instance = ds.get("InstanceNumber")
        position = None
        if "ImagePositionPatient" in ds and "ImageOrientationPatient" in ds:
            position = position_along_normal(ds.ImagePositionPatient, ds.ImageOrientationPatient)
        transfer_syntax = getattr(getattr(ds, "file_meta", None), "TransferSyntaxUID", None)
        record = SliceRecord(
            file_path=Path(path),
            series_uid=series_uid,
            instance_number=int(instance) if instance not in (None, "") else 0,
            position_along_normal=position,
            rows=int(ds.get("Rows", 0) or 0),
            cols=int(ds.get("Columns", 0) or 0),
            compressed_syntax=str(transfer_syntax) if transfer_syntax is not None and transfer_syntax.is_compressed else None,
            frames=int(ds.get("NumberOfFrames", 1) or 1),
        )
        return record, str(ds.get("PatientID", "") or "")
    except _READ_ERRORS as e:
        logger.debug(f"Skipping {path}: {e}")
        return None


def order_slices(slices: Sequence[SliceRecord]) -> Tuple[SliceRecord, ...]:
    """Geometric order when every slice has a position, else instance number; path breaks ties."""
    if slices and all(s.position_along_normal is not None for s in slices):
        key = lambda s: (s.position_along_normal, s.instance_number, str(s.file_path))
    else:
        key = lambda s: (s.instance_number, str(s.file_path))
    return tuple(sorted(slices, key=key))


def scan_and_group(root: Path, workers: int = 1) -> Tuple[List[SeriesRecord], WarningTally]:
    """
    Scan a directory tree for DICOM files and group them by SeriesInstanceUID.

    Returns:
        (series sorted by series_uid, tally of skipped files)
    Raises:
        OSError: root does not exist or is not a readable directory
    """
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"Data root is not a readable directory: {root}")

    files = sorted(
        p for p in root.rglob("*")
        if p.is_file() and not p.name.startswith(".") and p.suffix.lower() not in _IGNORED_SUFFIXES
    )
    tally = WarningTally()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            headers = list(pool.map(read_header, files))
    else:
        headers = [read_header(p) for p in files]

    grouped: Dict[str, List[SliceRecord]] = {}
    patients: Dict[str, str] = {}
    for path, header in zip(files, headers):
        if header is None:
            tally.add("unparseable_file")
            continue
        record, patient_id = header
        grouped.setdefault(record.series_uid, []).append(record)
        patients.setdefault(record.series_uid, patient_id)

    series = [
        SeriesRecord(series_uid=uid, slices=order_slices(slices), patient_id=patients[uid])
        for uid, slices in sorted(grouped.items())
    ]
    if tally.total:
        logger.warning(f"⚠️  Skipped {tally.total} unreadable files under {root}")
    logger.info(f"📁 {root}: {len(series)} series from {len(files) - tally.total} DICOM files")
    return series, tally


# ============================================================================
# PIXEL DECODING & TAG EXTRACTION
# ============================================================================

def decode_pixels(ds: Dataset) -> np.ndarray:
    """Decode native pixel data with modality rescale applied"""
    transfer_syntax = getattr(getattr(ds, "file_meta", None), "TransferSyntaxUID", None)
    if transfer_syntax is not None and transfer_syntax.is_compressed:
        raise UnsupportedTransferSyntaxError(
            f"Compressed transfer syntax {transfer_syntax} ({transfer_syntax.name}) is not supported"
        )
    frames = int(ds.get("NumberOfFrames", 1) or 1)
    if frames > 1:
        raise DicomDecodeError(f"Multi-frame objects are not supported ({frames} frames)")

    pixels = np.asarray(ds.pixel_array, dtype=np.float64)
    if pixels.ndim != 2:
        raise DicomDecodeError(f"Expected a single-channel 2D image, got shape {pixels.shape}")
    slope = float(ds.get("RescaleSlope", 1.0) or 1.0)
    intercept = float(ds.get("RescaleIntercept", 0.0) or 0.0)
    pixels = pixels * slope + intercept
    if str(ds.get("PhotometricInterpretation", "")).upper() == "MONOCHROME1":
        pixels = pixels.max() + pixels.min() - pixels
    return pixels


def _plain(value: Any) -> Any:
    if isinstance(value, MultiValue) or isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, IS):
        return int(value)
    if isinstance(value, (DSfloat, float)):
        return float(value)
    if isinstance(value, PersonName):
        return str(value)
    if isinstance(value, bytes):
        return None
    return value


def extract_tag_map(ds: Dataset, keywords: Sequence[str]) -> TagMap:
    """Raw values of the requested keywords; empty elements count as absent"""
    tag_map: TagMap = {}
    for keyword in keywords:
        if keyword not in ds:
            continue
        value = _plain(ds.data_element(keyword).value)
        if value is None or value == "" or value == []:
            continue
        tag_map[keyword] = value
    return tag_map


def read_slice_file(path: Path, keywords: Sequence[str]) -> Tuple[np.ndarray, TagMap]:
    try:
        ds = pydicom.dcmread(str(path))
    except _READ_ERRORS as e:
        raise DicomDecodeError(f"Cannot read {path}: {e}") from e
    try:
        pixels = decode_pixels(ds)
    except DicomDecodeError:
        raise
    except _READ_ERRORS + (RuntimeError, NotImplementedError) as e:
        raise DicomDecodeError(f"Cannot decode pixel data of {path}: {e}") from e
    return pixels, extract_tag_map(ds, keywords)


# ============================================================================
# SAMPLING & PREPROCESSING
# ============================================================================

def equidistant_indices(N: int, S: int) -> List[int]:
    """
    S indices evenly spaced over [0, N-1] (inclusive endpoints, rounded).
    Indices repeat when N < S. A single slice (S=1) is taken from the centre.
    """
    if N < 1 or S < 1:
        raise ValueError(f"equidistant_indices needs N >= 1 and S >= 1, got N={N}, S={S}")
    if S == 1:
        return [int(np.rint((N - 1) / 2))]
    return [int(i) for i in np.rint(np.linspace(0, N - 1, S))]


def preprocess_slice(pixels: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """
    Centre crop to size x size (padding with the matrix minimum where the input is smaller,
    extra pixel on the leading side), then z-score. Constant crops map to zeros.
    """
    image = np.asarray(pixels, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"preprocess_slice expects a non-empty 2D matrix, got shape {image.shape}")

    pad = []
    for dim in image.shape:
        missing = max(size - dim, 0)
        pad.append((missing - missing // 2, missing // 2))
    if any(before or after for before, after in pad):
        image = np.pad(image, pad, mode="constant", constant_values=image.min())

    top = (image.shape[0] - size) // 2
    left = (image.shape[1] - size) // 2
    crop = image[top:top + size, left:left + size]

    std = crop.std()
    if std < ZSCORE_EPS:
        return np.zeros((size, size), dtype=np.float32)
    return ((crop - crop.mean()) / std).astype(np.float32)


def load_series(source: SliceSource, S: int, schema: TagSchema,
                valid_indices: Optional[Sequence[int]] = None) -> Tuple[SeriesSample, List[int]]:
    """
    Sample S equidistant slices over the decodable slices of a series and build the
    image stack plus metadata table for the same slices.

    Slices the header already rules out (compressed syntax, multi-frame) are dropped without
    reading pixels. Pixel data is read only for selected slices; a selected slice that fails
    to decode is dropped and the selection is recomputed over the remaining candidates.

    Args:
        source: DICOM SeriesRecord or any SliceSource
        S: number of slices to sample
        schema: tag schema for the metadata table
        valid_indices: decodable slice indices if already known (skips header checks)

    Returns:
        (sample, candidate indices still considered decodable)
    """
    keywords = schema.keywords
    decoded: Dict[int, Tuple[np.ndarray, TagMap]] = {}
    failures: List[DicomDecodeError] = []

    if valid_indices is None:
        check = getattr(source, "header_failures", None)
        rejected = check() if check is not None else {}
        for index, error in rejected.items():
            failures.append(error)
            logger.warning(f"⚠️  {source.series_uid}: slice {index} undecodable ({error})")
        candidates = [i for i in range(source.num_slices) if i not in rejected]
    else:
        candidates = list(valid_indices)

    while True:
        if not candidates:
            error_cls = (
                UnsupportedTransferSyntaxError
                if failures and all(isinstance(e, UnsupportedTransferSyntaxError) for e in failures)
                else DicomDecodeError
            )
            raise error_cls(f"Series {source.series_uid}: no decodable slices ({len(failures)} failed)")

        selected = [candidates[p] for p in equidistant_indices(len(candidates), S)]
        broken = set()
        for index in dict.fromkeys(selected):
            if index in decoded:
                continue
            try:
                decoded[index] = source.read_slice(index, keywords)
            except DicomDecodeError as e:
                failures.append(e)
                broken.add(index)
                logger.warning(f"⚠️  {source.series_uid}: slice {index} undecodable ({e})")
        if not broken:
            break
        candidates = [i for i in candidates if i not in broken]

    planes = []
    tag_maps = []
    for index in selected:
        pixels, tag_map = decoded[index]
        planes.append(preprocess_slice(pixels))
        tag_maps.append(tag_map)

    warnings = {"undecodable_slices": len(failures)} if failures else {}
    return SeriesSample(
        images=ImageStack(data=np.stack(planes), slice_indices=tuple(selected)),
        table=build_feature_table(tag_maps, schema),
        label=getattr(source, "label", None),
        patient_id=source.patient_id,
        series_uid=source.series_uid,
        warnings=warnings,
    ), candidates
