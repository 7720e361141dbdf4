"""
Commands that use a trained checkpoint: evaluation and single-series prediction
"""

import logging
from typing import Any, Dict, List

from app.config import RunConfig
from app.errors import ConfigurationError
from app.services.checkpoint import load_checkpoint, restore_model
from app.services.dicom_ingest import load_series, scan_and_group
from app.services.inference import format_prediction, predict_sample
from app.services.runs import evaluate_checkpoint, run_summary
from app.services.evaluation import reports_text
from .base import CHECKPOINT, CONFIG, DATA_ROOT, LABELS_FILE, OUT, SCHEMA, SLICES, WORKERS, BaseCommand, CommandParameter

logger = logging.getLogger(__name__)


class EvalCommand(BaseCommand):
    """Evaluate a checkpoint on a labeled data root"""

    @property
    def name(self) -> str:
        return "eval"

    @property
    def description(self) -> str:
        return "Evaluate a checkpoint; writes eval_report.txt/json and predictions.csv"

    @property
    def parameters(self) -> List[CommandParameter]:
        return [
            CHECKPOINT, CONFIG, OUT, DATA_ROOT, LABELS_FILE, SCHEMA, WORKERS, SLICES,
            CommandParameter(name="label_map", type="choice", config_key="label_map", choices=["duke"],
                             description="Map joint labels onto the multilabel heads before scoring"),
        ]

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        checkpoint = load_checkpoint(config.checkpoint)
        model = restore_model(checkpoint)
        reports = evaluate_checkpoint(config, checkpoint, model, config.out_dir)
        print(reports_text(reports))
        return run_summary(reports)


class PredictCommand(BaseCommand):
    """Classify the series found under a directory"""

    @property
    def name(self) -> str:
        return "predict"

    @property
    def description(self) -> str:
        return "Classify a DICOM series and print per-slice attention pooling weights"

    @property
    def parameters(self) -> List[CommandParameter]:
        return [
            CHECKPOINT, CONFIG, SLICES,
            CommandParameter(name="series_dir", type="path", config_key="series_dir", required=True,
                             description="Directory holding the series' slice files"),
        ]

    @property
    def writes_run_dir(self) -> bool:
        return False

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        checkpoint = load_checkpoint(config.checkpoint)
        model = restore_model(checkpoint)
        records, tally = scan_and_group(config.series_dir)
        if not records:
            raise ConfigurationError(f"No DICOM series found under {config.series_dir}")
        if len(records) > 1:
            logger.warning(f"⚠️  {len(records)} series under {config.series_dir}, predicting each")

        S = config.train.slices or checkpoint.train_config.resolved_slices
        predicted: Dict[str, Any] = {}
        for record in records:
            sample, _ = load_series(record, S, checkpoint.tag_schema)
            prediction = predict_sample(model, sample, checkpoint.label_schema)
            print(format_prediction(prediction))
            predicted[prediction.series_uid] = prediction.labels
        return {"series": len(predicted), "skipped_files": tally.total}
