"""
Ingestion tests: grouping and ordering, slice sampling, preprocessing, decoding and the
synthetic write -> scan -> load round trip.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np
import pydicom
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydicom.uid import JPEGBaseline8Bit

from app.errors import DicomDecodeError, UnsupportedTransferSyntaxError
from app.models import SeriesRecord, SliceRecord
from app.services.dicom_ingest import (
    decode_pixels,
    equidistant_indices,
    load_series,
    position_along_normal,
    preprocess_slice,
    read_header,
    scan_and_group,
)
from app.services.synthetic import CLASS_TAG


# ============================================================================
# SCANNING
# ============================================================================

def test_position_along_normal_axial():
    assert position_along_normal([1.0, 2.0, 3.0], [1, 0, 0, 0, 1, 0]) == pytest.approx(3.0)
    assert position_along_normal([1.0, 2.0], [1, 0, 0, 0, 1, 0]) is None


def test_three_files_one_series(tmp_path, dicom_writer):
    for i in range(3):
        dicom_writer(tmp_path / f"s{i}.dcm", "1.2.3", instance=i + 1, z=float(i))
    series, tally = scan_and_group(tmp_path)
    assert len(series) == 1
    assert series[0].num_slices == 3
    assert tally.total == 0


def test_empty_directory(tmp_path):
    series, tally = scan_and_group(tmp_path)
    assert series == []
    assert tally.total == 0


def test_missing_root_is_an_io_error(tmp_path):
    with pytest.raises(OSError):
        scan_and_group(tmp_path / "nope")


def test_grouping_orders_slices_by_position(tmp_path, dicom_writer):
    for name, uid, z in [("a1", "1.1", 0.0), ("a2", "1.1", 10.0), ("a3", "1.1", 5.0),
                         ("b1", "1.2", 2.0), ("b2", "1.2", 1.0)]:
        # instance numbers deliberately disagree with geometry
        dicom_writer(tmp_path / f"{name}.dcm", uid, instance=10 - int(z), z=z)
    series, _ = scan_and_group(tmp_path)
    assert [s.series_uid for s in series] == ["1.1", "1.2"]
    assert [s.position_along_normal for s in series[0].slices] == [0.0, 5.0, 10.0]
    assert [s.position_along_normal for s in series[1].slices] == [1.0, 2.0]


def test_instance_number_fallback(tmp_path, dicom_writer):
    dicom_writer(tmp_path / "x.dcm", "9.9", instance=2, z=0.0)
    dicom_writer(tmp_path / "y.dcm", "9.9", instance=1)
    series, _ = scan_and_group(tmp_path)
    assert [s.instance_number for s in series[0].slices] == [1, 2]


def test_unparseable_files_are_tallied(tmp_path, dicom_writer):
    dicom_writer(tmp_path / "ok.dcm", "1.5", instance=1, z=0.0)
    (tmp_path / "junk.dcm").write_bytes(b"not a dicom file at all")
    (tmp_path / "labels.csv").write_text("series_uid,label\n")
    series, tally = scan_and_group(tmp_path, workers=2)
    assert len(series) == 1
    assert tally.counts == {"unparseable_file": 1}
    assert read_header(tmp_path / "junk.dcm") is None


def test_scan_is_deterministic(synthetic_root):
    root, _ = synthetic_root
    first, _ = scan_and_group(root)
    second, _ = scan_and_group(root, workers=3)
    assert first == second


# ============================================================================
# SAMPLING & PREPROCESSING
# ============================================================================

@pytest.mark.parametrize("N,S,expected", [
    (100, 10, [0, 11, 22, 33, 44, 55, 66, 77, 88, 99]),
    (10, 10, list(range(10))),
    (5, 10, [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]),
    (20, 10, [0, 2, 4, 6, 8, 11, 13, 15, 17, 19]),
    (5, 1, [2]),
    (1, 3, [0, 0, 0]),
])
def test_equidistant_indices(N, S, expected):
    assert equidistant_indices(N, S) == expected


@given(st.integers(1, 400), st.integers(2, 64))
@settings(max_examples=200, deadline=None)
def test_equidistant_indices_properties(N, S):
    indices = equidistant_indices(N, S)
    assert len(indices) == S
    assert all(0 <= i <= N - 1 for i in indices)
    assert indices == sorted(indices)
    if N >= S:
        assert len(set(indices)) == S
    if N >= 2:
        assert indices[0] == 0 and indices[-1] == N - 1


def test_equidistant_indices_rejects_empty():
    with pytest.raises(ValueError):
        equidistant_indices(0, 3)


def test_preprocess_constant_matrix_is_zero():
    out = preprocess_slice(np.full((300, 300), 7.0))
    assert out.shape == (224, 224)
    assert not out.any()


def test_preprocess_exact_size_is_zscored():
    rng = np.random.default_rng(0)
    out = preprocess_slice(rng.normal(5.0, 3.0, size=(224, 224)))
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() - 1.0) < 1e-4


def test_preprocess_centre_crop_offset():
    image = np.zeros((300, 300))
    image[150, 150] = 1000.0
    out = preprocess_slice(image)
    assert np.unravel_index(np.argmax(out), out.shape) == (112, 112)


def test_preprocess_pads_with_minimum_leading_side_first():
    image = np.full((221, 224), 5.0)
    image[0, 0] = 1.0
    image[-1, :] = 9.0
    out = preprocess_slice(image)
    # 3 missing rows: 2 before, 1 after; padded rows take the minimum (1.0)
    assert out[0, 5] == out[1, 5] == out[223, 5]
    assert out[2, 0] == out[0, 5]
    assert out[222, 5] > out[2, 5]


@given(st.integers(1, 260), st.integers(1, 260), st.integers(0, 2 ** 16))
@settings(max_examples=60, deadline=None)
def test_preprocess_shape_and_moments(rows, cols, seed):
    image = np.random.default_rng(seed).normal(size=(rows, cols))
    out = preprocess_slice(image)
    assert out.shape == (224, 224)
    assert np.isfinite(out).all()
    if out.any():
        assert abs(out.mean()) < 1e-5
        assert abs(out.var() - 1.0) < 1e-3


# ============================================================================
# DECODING
# ============================================================================

def test_decode_applies_rescale_and_inverts_monochrome1(tmp_path, dicom_writer):
    pixels = np.arange(64, dtype=np.uint16).reshape(8, 8)
    path = dicom_writer(tmp_path / "m.dcm", "2.2", 1, z=0.0, pixels=pixels)
    ds = pydicom.dcmread(path)
    ds.RescaleSlope = "2.0"
    ds.RescaleIntercept = "-10.0"
    np.testing.assert_allclose(decode_pixels(ds), pixels * 2.0 - 10.0)

    ds.PhotometricInterpretation = "MONOCHROME1"
    inverted = decode_pixels(ds)
    assert inverted[0, 0] == pytest.approx(116.0)
    assert inverted[7, 7] == pytest.approx(-10.0)


def test_compressed_transfer_syntax_is_rejected(tmp_path, dicom_writer):
    ds = pydicom.dcmread(dicom_writer(tmp_path / "c.dcm", "2.3", 1))
    ds.file_meta.TransferSyntaxUID = JPEGBaseline8Bit
    with pytest.raises(UnsupportedTransferSyntaxError):
        decode_pixels(ds)


def test_multiframe_is_rejected(tmp_path, dicom_writer):
    ds = pydicom.dcmread(dicom_writer(tmp_path / "f.dcm", "2.4", 1))
    ds.NumberOfFrames = 2
    with pytest.raises(DicomDecodeError):
        decode_pixels(ds)


# ============================================================================
# LOADING
# ============================================================================

@dataclass
class FlakySource:
    series_uid: str
    patient_id: str
    broken: List[int]
    n: int
    error: type = DicomDecodeError
    reads: List[int] = field(default_factory=list)

    @property
    def num_slices(self) -> int:
        return self.n

    def read_slice(self, index, keywords):
        self.reads.append(index)
        if index in self.broken:
            raise self.error(f"slice {index} broken")
        return np.full((16, 16), float(index)) + np.eye(16), {}


def test_load_series_single_slice_repeats(tag_schema):
    sample, valid = load_series(FlakySource("1.9", "P", [], 1), 10, tag_schema)
    assert sample.images.slice_indices == (0,) * 10
    assert sample.images.data.shape == (10, 224, 224)
    assert sample.table.values.shape == (10, tag_schema.feature_count)
    assert valid == [0]


def test_load_series_twenty_slices(tag_schema):
    sample, _ = load_series(FlakySource("1.9", "P", [], 20), 10, tag_schema)
    assert sample.images.slice_indices == (0, 2, 4, 6, 8, 11, 13, 15, 17, 19)


def test_load_series_skips_corrupt_middle_slice(tag_schema):
    sample, valid = load_series(FlakySource("1.9", "P", [4], 11), 10, tag_schema)
    assert 4 not in valid and len(valid) == 10
    assert sample.images.slice_indices == tuple(valid)
    assert sample.warnings == {"undecodable_slices": 1}


def test_load_series_all_slices_broken(tag_schema):
    with pytest.raises(DicomDecodeError, match="1.77"):
        load_series(FlakySource("1.77", "P", [0, 1, 2], 3), 4, tag_schema)
    with pytest.raises(UnsupportedTransferSyntaxError):
        load_series(FlakySource("1.78", "P", [0, 1], 2, UnsupportedTransferSyntaxError), 4, tag_schema)


def test_only_selected_slices_are_decoded(tag_schema):
    source = FlakySource("1.9", "P", [], 200)
    sample, valid = load_series(source, 5, tag_schema)
    assert sorted(set(source.reads)) == list(sample.images.slice_indices) == [0, 50, 100, 149, 199]
    assert len(valid) == 200


def test_broken_selection_is_resampled_without_rereading(tag_schema):
    source = FlakySource("1.9", "P", [100], 201)
    sample, valid = load_series(source, 3, tag_schema)
    assert 100 not in sample.images.slice_indices and 100 not in valid
    assert source.reads.count(0) == 1 and source.reads.count(200) == 1
    assert sample.warnings == {"undecodable_slices": 1}


def test_cached_candidates_skip_header_checks(tag_schema):
    source = FlakySource("1.9", "P", [], 20)
    sample, _ = load_series(source, 2, tag_schema, valid_indices=[3, 7])
    assert sample.images.slice_indices == (3, 7)
    assert sorted(source.reads) == [3, 7]


def test_header_rejections_need_no_pixel_reads(tmp_path, tag_schema):
    # files do not exist: any attempted read would raise a plain DicomDecodeError
    slices = tuple(
        SliceRecord(file_path=tmp_path / f"{i}.dcm", series_uid="3.1", instance_number=i,
                    position_along_normal=None, rows=8, cols=8, compressed_syntax="1.2.840.10008.1.2.4.50")
        for i in range(4)
    )
    record = SeriesRecord(series_uid="3.1", slices=slices)
    assert set(record.header_failures()) == {0, 1, 2, 3}
    with pytest.raises(UnsupportedTransferSyntaxError, match="3.1"):
        load_series(record, 2, tag_schema)


def test_multiframe_header_is_recorded_at_scan(tmp_path, dicom_writer, tag_schema):
    dicom_writer(tmp_path / "a.dcm", "3.2", instance=1, z=0.0)
    dicom_writer(tmp_path / "b.dcm", "3.2", instance=2, z=1.0, extra={"NumberOfFrames": 2})
    (record,), _ = scan_and_group(tmp_path)
    assert [s.frames for s in record.slices] == [1, 2]
    assert list(record.header_failures()) == [1]
    sample, valid = load_series(record, 3, tag_schema)
    assert valid == [0]
    assert sample.images.slice_indices == (0, 0, 0)
    assert sample.warnings == {"undecodable_slices": 1}


def test_synthetic_round_trip(synthetic_root, tag_schema):
    root, dataset = synthetic_root
    records, tally = scan_and_group(root)
    assert len(records) == len(dataset)
    assert tally.total == 0

    by_uid = {s.series_uid: s for s in dataset.series}
    for record in records:
        original = by_uid[record.series_uid]
        assert record.patient_id == original.patient_id
        assert record.num_slices == original.num_slices
        from_disk, _ = load_series(record, 5, tag_schema)
        in_memory, _ = load_series(original, 5, tag_schema)
        np.testing.assert_array_equal(from_disk.table.mask, in_memory.table.mask)
        np.testing.assert_array_equal(from_disk.table.values, in_memory.table.values)
        np.testing.assert_allclose(from_disk.images.data, in_memory.images.data, atol=1e-6)
        assert from_disk.images.slice_indices == in_memory.images.slice_indices


def test_dropped_tags_are_absent_elements(synthetic_root):
    root, dataset = synthetic_root
    records, _ = scan_and_group(root)
    by_uid = {s.series_uid: s for s in dataset.series}
    checked = 0
    for record in records:
        header = by_uid[record.series_uid].header
        ds = pydicom.dcmread(record.slices[0].file_path)
        for keyword in ("RepetitionTime", "EchoTime", "Manufacturer", CLASS_TAG):
            assert (keyword in ds) == (keyword in header)
            checked += keyword not in header
    assert checked > 0
