"""
Training commands: single run and patient-level cross-validation
"""

import logging
from typing import Any, Dict, List

from app.config import RunConfig
from app.services.runs import holdout_split, load_labeled_data, resolve_tag_schema, run_crossval, run_training
from .base import TRAINING_PARAMETERS, BaseCommand, CommandParameter

logger = logging.getLogger(__name__)


class TrainCommand(BaseCommand):
    """Train one model and keep the best epoch"""

    @property
    def name(self) -> str:
        return "train"

    @property
    def description(self) -> str:
        return "Train a series classifier; writes model.ckpt, metrics.jsonl, lr_trace.jsonl and the resolved config"

    @property
    def parameters(self) -> List[CommandParameter]:
        return TRAINING_PARAMETERS + [
            CommandParameter(name="val_data_root", type="path", config_key="val_data_root",
                             description="Separate validation root (default: patient-level holdout)"),
            CommandParameter(name="resume", type="path", config_key="resume",
                             description="Initialise weights from a checkpoint"),
        ]

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        tag_schema = resolve_tag_schema(config)
        series, tally = load_labeled_data(config, tag_schema)
        if tally.total:
            logger.warning(f"⚠️  skipped during scanning: {tally.as_list()}")

        if config.val_data_root is not None:
            train_series = series
            val_series, _ = load_labeled_data(config, tag_schema, data_root=config.val_data_root,
                                              class_names=series.class_names)
        else:
            train_series, val_series = holdout_split(series, config.train.val_folds, config.train.seed)

        result = run_training(config, train_series, val_series, tag_schema, config.out_dir)
        return {
            "checkpoint": str(result.checkpoint_path),
            "best_epoch": result.best_epoch,
            "best_weighted_f1": round(result.best_score, 6),
        }


class CrossValCommand(BaseCommand):
    """k-fold patient-level cross-validation"""

    @property
    def name(self) -> str:
        return "crossval"

    @property
    def description(self) -> str:
        return "Patient-stratified k-fold cross-validation with mean ± std of weighted precision/recall/F1"

    @property
    def parameters(self) -> List[CommandParameter]:
        return TRAINING_PARAMETERS + [
            CommandParameter(name="folds", type="integer", config_key="folds", description="Number of folds (k)"),
        ]

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        tag_schema = resolve_tag_schema(config)
        series, tally = load_labeled_data(config, tag_schema)
        if tally.total:
            logger.warning(f"⚠️  skipped during scanning: {tally.as_list()}")

        result = run_crossval(config, series, tag_schema, config.out_dir)
        print(result.summary.to_text())
        return {"folds": config.folds, "f1_mean": round(result.summary.f1[0], 4), "f1_std": round(result.summary.f1[1], 4)}
