"""
Metadata feature space: DICOM tags -> feature columns.

Each schema entry contributes its value columns (one-hot for categorical tags, one column
for continuous tags and flags) followed by one missingness-indicator column.
"""

import hashlib
import json
import logging
import math
from collections.abc import Sequence as SequenceABC
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydicom.datadict import keyword_for_tag

from app.errors import SchemaValidationError
from app.models import FeatureTable, SparseRow, TagMap

logger = logging.getLogger(__name__)

REFERENCE_SCHEMA_PATH = Path(__file__).parent / "schemas" / "reference_schema.json"

TagKind = Literal["categorical", "continuous", "flag"]

_TRUE_STRINGS = {"Y", "YES", "TRUE", "1", "T"}
_FALSE_STRINGS = {"N", "NO", "FALSE", "0", "F"}


class Normalization(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    std: float

    @field_validator("std")
    @classmethod
    def _positive_std(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"normalization std must be > 0, got {value}")
        return value


class TagEntry(BaseModel):
    """One DICOM tag (or one token of a multi-valued tag) in the feature space"""
    model_config = ConfigDict(frozen=True)

    tag: str = Field(pattern=r"^\([0-9A-Fa-f]{4},[0-9A-Fa-f]{4}\)$")
    name: str
    kind: TagKind
    keyword: Optional[str] = None
    categories: Optional[List[str]] = None
    normalization: Optional[Normalization] = None
    token: Optional[str] = None
    derive: Optional[Literal["orientation_plane"]] = None

    @model_validator(mode="before")
    @classmethod
    def _resolve_keyword(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("keyword") and isinstance(data.get("tag"), str):
            try:
                group, element = data["tag"].strip("()").split(",")
                data = {**data, "keyword": keyword_for_tag((int(group, 16) << 16) | int(element, 16)) or None}
            except ValueError:
                pass
        return data

    @model_validator(mode="after")
    def _check_kind(self) -> "TagEntry":
        if self.kind == "categorical":
            if not self.categories:
                raise ValueError(f"categorical entry {self.name} needs a non-empty vocabulary")
            folded = [c.strip().casefold() for c in self.categories]
            if len(set(folded)) != len(folded):
                raise ValueError(f"categorical entry {self.name} has duplicate categories")
        elif self.categories is not None:
            raise ValueError(f"{self.kind} entry {self.name} cannot declare categories")
        if self.token is not None and self.kind != "flag":
            raise ValueError(f"only flag entries take a token ({self.name})")
        if self.normalization is not None and self.kind != "continuous":
            raise ValueError(f"only continuous entries take normalization ({self.name})")
        if self.derive is not None and self.kind != "categorical":
            raise ValueError(f"derived entry {self.name} must be categorical")

        dictionary_keyword = keyword_for_tag(self.tag_int)
        if self.keyword is None:
            raise ValueError(f"tag {self.tag} of {self.name} is not in the DICOM dictionary; give a keyword")
        if dictionary_keyword and dictionary_keyword != self.keyword:
            raise ValueError(f"keyword {self.keyword} does not match tag {self.tag} ({dictionary_keyword})")
        return self

    @property
    def tag_int(self) -> int:
        group, element = self.tag.strip("()").split(",")
        return (int(group, 16) << 16) | int(element, 16)

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1


class ColumnSpan(NamedTuple):
    entry: TagEntry
    start: int
    stop: int
    indicator: int


class TagSchema(BaseModel):
    """Ordered tag entries; the column layout is a pure function of entry order."""
    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    version: int = 1
    description: str = ""
    entries: List[TagEntry]

    @model_validator(mode="after")
    def _unique_names(self) -> "TagSchema":
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("schema entry names must be unique")
        if not self.entries:
            raise ValueError("schema needs at least one entry")
        return self

    @property
    def layout(self) -> Tuple[ColumnSpan, ...]:
        spans = []
        cursor = 0
        for entry in self.entries:
            spans.append(ColumnSpan(entry, cursor, cursor + entry.width, cursor + entry.width))
            cursor += entry.width + 1
        return tuple(spans)

    @property
    def feature_count(self) -> int:
        return sum(e.width for e in self.entries) + len(self.entries)

    @property
    def indicator_columns(self) -> Tuple[int, ...]:
        return tuple(span.indicator for span in self.layout)

    @property
    def keywords(self) -> List[str]:
        """DICOM keywords the schema reads, in first-use order"""
        seen: Dict[str, None] = {}
        for entry in self.entries:
            seen.setdefault(entry.keyword, None)
        return list(seen)

    def column_names(self) -> List[str]:
        names: List[str] = []
        for span in self.layout:
            entry = span.entry
            if entry.kind == "categorical":
                names.extend(f"{entry.name}={c}" for c in entry.categories)
            else:
                names.append(entry.name)
            names.append(f"{entry.name}:missing")
        return names

    def fingerprint(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_schema(path: Path) -> TagSchema:
    """Read and validate a schema file"""
    path = Path(path)
    try:
        return TagSchema.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise SchemaValidationError(f"Invalid tag schema {path}: {e}") from e


def save_schema(schema: TagSchema, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(schema.model_dump_json(indent=2, exclude_none=True), encoding="utf-8")
    return path


def reference_schema() -> TagSchema:
    return load_schema(REFERENCE_SCHEMA_PATH)


def schema_from_json(payload: str) -> TagSchema:
    try:
        return TagSchema.model_validate_json(payload)
    except ValidationError as e:
        raise SchemaValidationError(f"Invalid tag schema: {e}") from e


# ============================================================================
# VALUE ENCODING
# ============================================================================

def _values_of(raw: Any) -> List[Any]:
    if raw is None:
        return []
    if isinstance(raw, (str, bytes)):
        return [raw] if str(raw).strip() else []
    if isinstance(raw, SequenceABC):
        return [v for v in raw if v is not None and str(v).strip() != ""]
    return [raw]


def first_value(raw: Any) -> Any:
    values = _values_of(raw)
    return values[0] if values else None


def orientation_plane(orientation: Any) -> Optional[str]:
    """Dominant plane (AX/COR/SAG) from ImageOrientationPatient"""
    values = _values_of(orientation)
    if len(values) < 6:
        return None
    try:
        direction = np.asarray([float(v) for v in values[:6]], dtype=np.float64)
    except (TypeError, ValueError):
        return None
    normal = np.cross(direction[:3], direction[3:])
    if not np.any(normal):
        return None
    return ("SAG", "COR", "AX")[int(np.argmax(np.abs(normal)))]


def encode_categorical(raw: Optional[Any], vocabulary: Sequence[str]) -> np.ndarray:
    """
    One-hot encode a categorical value.

    Exact match after trimming and case folding gives a unit vector; an unknown value is an
    observed all-zero vector; an absent value is all NaN (missing).
    """
    if not vocabulary:
        raise SchemaValidationError("categorical vocabulary must be non-empty")
    if raw is None or str(raw).strip() == "":
        return np.full(len(vocabulary), np.nan, dtype=np.float64)
    vector = np.zeros(len(vocabulary), dtype=np.float64)
    needle = str(raw).strip().casefold()
    for i, category in enumerate(vocabulary):
        if category.strip().casefold() == needle:
            vector[i] = 1.0
            break
    return vector


def normalize_continuous(raw: Optional[float], stats: Optional[Normalization]) -> float:
    if raw is None:
        return math.nan
    value = float(raw)
    if not math.isfinite(value):
        return math.nan
    if stats is None:
        return value
    if not stats.std > 0:
        raise SchemaValidationError(f"normalization std must be > 0, got {stats.std}")
    return (value - stats.mean) / stats.std


def _flag_value(entry: TagEntry, raw: Any) -> Optional[float]:
    values = _values_of(raw)
    if not values:
        return None
    if entry.token is not None:
        token = entry.token.casefold()
        return 1.0 if any(token in str(v).casefold() for v in values) else 0.0
    text = str(values[0]).strip().upper()
    if text in _TRUE_STRINGS:
        return 1.0
    if text in _FALSE_STRINGS:
        return 0.0
    raise ValueError(f"unparseable flag value {values[0]!r}")


def encode_entry(entry: TagEntry, tag_map: TagMap) -> Tuple[np.ndarray, bool]:
    """Encode one entry for one slice. Returns (value columns, parse_failed)."""
    raw = tag_map.get(entry.keyword)
    if entry.kind == "categorical":
        if entry.derive == "orientation_plane":
            value = orientation_plane(raw)
            failed = value is None and bool(_values_of(raw))
            return encode_categorical(value, entry.categories), failed
        return encode_categorical(first_value(raw), entry.categories), False

    try:
        if entry.kind == "continuous":
            value = first_value(raw)
            number = normalize_continuous(None if value is None else float(value), entry.normalization)
            failed = value is not None and math.isnan(number)
            return np.array([number]), failed
        flag = _flag_value(entry, raw)
        return np.array([math.nan if flag is None else flag]), False
    except (TypeError, ValueError):
        return np.array([math.nan]), True


def build_feature_table(tag_maps: Sequence[TagMap], schema: TagSchema) -> FeatureTable:
    """
    Build the S x F table for the given slices.
    Unparseable values count as missing and are tallied per entry.
    """
    if len(tag_maps) == 0:
        raise ValueError("build_feature_table needs at least one slice")
    values = np.full((len(tag_maps), schema.feature_count), np.nan, dtype=np.float32)
    warnings: Dict[str, int] = {}
    for s, tag_map in enumerate(tag_maps):
        for span in schema.layout:
            encoded, failed = encode_entry(span.entry, tag_map)
            if failed:
                warnings[span.entry.name] = warnings.get(span.entry.name, 0) + 1
            values[s, span.start:span.stop] = encoded
            values[s, span.indicator] = 1.0 if np.all(np.isnan(encoded)) else 0.0

    if warnings:
        logger.warning(f"⚠️  Unparseable tag values treated as missing: {sorted(warnings.items())}")
    return FeatureTable(
        values=values,
        mask=~np.isnan(values),
        schema_fingerprint=schema.fingerprint(),
        warnings=warnings,
    )


def observed_pairs(table: FeatureTable, s: int) -> SparseRow:
    if not 0 <= s < table.num_slices:
        raise IndexError(f"slice index {s} out of range for {table.num_slices} slices")
    columns = np.flatnonzero(table.mask[s])
    return SparseRow(pairs=tuple((int(f), float(table.values[s, f])) for f in columns))


def fit_normalization(schema: TagSchema, tag_maps: Iterable[TagMap]) -> TagSchema:
    """
    Estimate mean/std of every continuous entry on the given (training) tag maps and
    return a new schema with the statistics frozen in.
    """
    continuous = [e for e in schema.entries if e.kind == "continuous"]
    samples: Dict[str, List[float]] = {e.name: [] for e in continuous}
    for tag_map in tag_maps:
        for entry in continuous:
            value = first_value(tag_map.get(entry.keyword))
            try:
                number = float(value) if value is not None else math.nan
            except (TypeError, ValueError):
                continue
            if math.isfinite(number):
                samples[entry.name].append(number)

    entries = []
    for entry in schema.entries:
        if entry.kind != "continuous":
            entries.append(entry)
            continue
        observed = np.asarray(samples[entry.name], dtype=np.float64)
        mean = float(observed.mean()) if observed.size else 0.0
        std = float(observed.std()) if observed.size else 0.0
        if std < 1e-6:
            std = 1.0
        entries.append(entry.model_copy(update={"normalization": Normalization(mean=mean, std=std)}))
        logger.debug(f"{entry.name}: n={observed.size} mean={mean:.4g} std={std:.4g}")
    return schema.model_copy(update={"entries": entries})
