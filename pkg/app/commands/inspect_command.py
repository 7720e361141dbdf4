"""
Artifact inspection
"""

import json
import logging
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from app.config import RunConfig
from app.errors import ConfigurationError
from app.services.checkpoint import load_checkpoint
from app.services.dicom_ingest import scan_and_group
from .base import CONFIG, WORKERS, BaseCommand, CommandParameter

logger = logging.getLogger(__name__)


class InspectCommand(BaseCommand):
    """Describe a checkpoint file or a DICOM data root"""

    @property
    def name(self) -> str:
        return "inspect"

    @property
    def description(self) -> str:
        return "Print a checkpoint's version, config, fingerprint and parameter table, or a data root's series counts"

    @property
    def parameters(self) -> List[CommandParameter]:
        return [
            CommandParameter(name="target", type="path", config_key="target", required=True,
                             description="Checkpoint file or DICOM root directory"),
            CONFIG,
            WORKERS,
        ]

    @property
    def writes_run_dir(self) -> bool:
        return False

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        target = config.target
        if target.is_file():
            return self._checkpoint(target)
        if target.is_dir():
            return self._data_root(target, config.workers)
        raise ConfigurationError(f"Nothing to inspect at {target}")

    def _checkpoint(self, path) -> Dict[str, Any]:
        ckpt = load_checkpoint(path)
        table = pd.DataFrame(ckpt.parameter_table())
        print(f"format version : {ckpt.format_version}")
        print(f"backbone       : {ckpt.backbone_id}")
        print(f"variant        : {ckpt.train_config.baseline}")
        print(f"label mode     : {ckpt.label_schema.mode} ({ckpt.label_schema.num_classes} classes)")
        print(f"schema         : {ckpt.schema_fingerprint} (F={ckpt.tag_schema.feature_count})")
        print("model config   : " + json.dumps(ckpt.model_config.model_dump()))
        print("train config   : " + json.dumps(ckpt.train_config.model_dump()))
        if ckpt.extra:
            print("extra          : " + json.dumps(ckpt.extra))
        print(table.to_string(index=False))
        print(f"total parameters: {int(table['count'].sum())}")
        return {"tensors": len(table), "parameters": int(table["count"].sum())}

    def _data_root(self, root, workers: int) -> Dict[str, Any]:
        records, tally = scan_and_group(root, workers=workers)
        counts = np.array([r.num_slices for r in records]) if records else np.zeros(0, dtype=int)
        print(f"series         : {len(records)}")
        print(f"patients       : {len(set(r.patient_id for r in records))}")
        if len(counts):
            print(f"slices/series  : min={counts.min()} median={int(np.median(counts))} max={counts.max()}")
        print(f"skipped files  : {tally.total}")
        for reason, n in tally.as_list():
            print(f"  {reason}: {n}")
        return {"series": len(records), "skipped": tally.total}
