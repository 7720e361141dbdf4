"""
Shared fixtures: tiny model dimensions, small synthetic recipes and hand-built DICOM files.
"""

from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings
from pydicom.dataset import FileDataset, FileMetaDataset
from pydicom.uid import ExplicitVRLittleEndian, MRImageStorage, generate_uid

from app.config import ModelConfig, RunConfig, TrainConfig
from app.models import SynthSpec
from app.services.metadata_schema import reference_schema
from app.services.synthetic import generate_dataset, write_dicom_like

settings.register_profile("suite", suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("suite")


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def tag_schema():
    return reference_schema()


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        visual_dim=16,
        metadata_dim=8,
        dictionary_dim=8,
        fusion_dim=16,
        output_dim=8,
        heads=2,
        ff_expansion=2,
        max_slices=16,
        pool_hidden=8,
        imputer_hidden=16,
    )


@pytest.fixture
def tiny_spec() -> SynthSpec:
    return SynthSpec(
        n_series=12,
        n_classes=4,
        slices_min=6,
        slices_max=8,
        signal_mode="image_only",
        missingness_rate=0.3,
        matrix_size=32,
        series_per_patient=2,
        seed=3,
    )


@pytest.fixture
def tiny_run_config(tiny_model_config, tmp_path) -> RunConfig:
    return RunConfig(
        out_dir=tmp_path / "run",
        model=tiny_model_config,
        train=TrainConfig(slices=3, batch_size=4, epochs=2, base_lr=1e-3, seed=0),
    )


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """A written synthetic dataset (image_only, 30% missingness) plus the in-memory original"""
    spec = SynthSpec(n_series=8, n_classes=4, slices_min=6, slices_max=7, matrix_size=32,
                     missingness_rate=0.3, seed=11)
    dataset = generate_dataset(spec, reference_schema())
    root = tmp_path_factory.mktemp("synth")
    write_dicom_like(dataset, root)
    return root, dataset


def write_slice(path: Path, series_uid: str, instance: int, z: Optional[float] = None,
                pixels: Optional[np.ndarray] = None, patient_id: str = "P0",
                extra: Optional[Dict[str, object]] = None) -> Path:
    """Minimal explicit-VR little endian MR slice; axial orientation when z is given"""
    pixels = np.zeros((8, 8), dtype=np.uint16) if pixels is None else pixels.astype(np.uint16)
    meta = FileMetaDataset()
    meta.MediaStorageSOPClassUID = MRImageStorage
    meta.MediaStorageSOPInstanceUID = generate_uid()
    meta.TransferSyntaxUID = ExplicitVRLittleEndian

    ds = FileDataset(str(path), {}, file_meta=meta, preamble=b"\0" * 128)
    ds.SOPClassUID = MRImageStorage
    ds.SOPInstanceUID = meta.MediaStorageSOPInstanceUID
    ds.SeriesInstanceUID = series_uid
    ds.PatientID = patient_id
    ds.Modality = "MR"
    ds.InstanceNumber = instance
    if z is not None:
        ds.ImagePositionPatient = ["0.0", "0.0", repr(float(z))]
        ds.ImageOrientationPatient = ["1.0", "0.0", "0.0", "0.0", "1.0", "0.0"]
    for keyword, value in (extra or {}).items():
        setattr(ds, keyword, value)
    ds.Rows, ds.Columns = pixels.shape
    ds.SamplesPerPixel = 1
    ds.PhotometricInterpretation = "MONOCHROME2"
    ds.BitsAllocated = 16
    ds.BitsStored = 16
    ds.HighBit = 15
    ds.PixelRepresentation = 0
    ds.PixelData = pixels.astype("<u2").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save_as(path, enforce_file_format=True)
    return path


@pytest.fixture
def dicom_writer():
    return write_slice

