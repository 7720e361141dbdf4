"""
Run orchestration shared by the commands: data resolution, validation holdout,
single training runs, cross-validation and checkpoint evaluation.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.config import RunConfig
from app.errors import ConfigurationError, SchemaMismatchError
from app.models import WarningTally
from app.network.SeriesClassifier import SeriesModel
from app.services.checkpoint import Checkpoint, load_checkpoint
from app.services.datasets import LabeledSeries, SeriesDataset, collect_tag_maps, load_labeled_root
from app.services.evaluation import FoldSummary, MetricsReport, head_reports, summarize_folds
from app.services.labels import LabelSchema, encode_targets, targets_as_arrays
from app.services.metadata_schema import TagSchema, fit_normalization, load_schema, reference_schema
from app.services.splits import FoldSplit, stratified_patient_folds
from app.services.synthetic import generate_dataset
from app.services.training import EvaluationResult, TrainResult, evaluate_model, make_loader, train
from app.utils.report_writer import write_fold_summary, write_predictions, write_reports

logger = logging.getLogger(__name__)


def resolve_tag_schema(config: RunConfig) -> TagSchema:
    if config.schema_path is not None:
        return load_schema(config.schema_path)
    return reference_schema()


def load_labeled_data(config: RunConfig, tag_schema: TagSchema, data_root: Optional[Path] = None,
                      class_names: Optional[List[str]] = None) -> Tuple[LabeledSeries, WarningTally]:
    """
    Labeled series from a data root (labels.csv next to the series unless labels_file is set)
    or, without a data root, from the run's synthetic recipe.
    """
    root = data_root or config.data_root
    if root is not None:
        labels_file = config.labels_file if data_root is None else None
        return load_labeled_root(root, labels_file, workers=config.workers, class_names=class_names)
    if config.synth is not None:
        dataset = generate_dataset(config.synth, tag_schema)
        return dataset.to_labeled(), WarningTally()
    raise ConfigurationError("no data: pass --data-root, set SERIESCLF_DATA_ROOT or give a synth block")


def holdout_split(series: LabeledSeries, k: int, seed: int) -> Tuple[LabeledSeries, Optional[LabeledSeries]]:
    """Patient-level holdout of one stratified fold; no holdout when there are fewer than k patients"""
    if len(set(series.patient_ids)) < k:
        logger.warning(f"⚠️  fewer than {k} patients, training without a validation split")
        return series, None
    folds = stratified_patient_folds(list(zip(series.patient_ids, series.labels)), k, seed)
    train_idx, val_idx = folds.split_indices(series.patient_ids, 0)
    return series.subset(train_idx), series.subset(val_idx)


def prepare_schema(config: RunConfig, tag_schema: TagSchema, train_series: LabeledSeries) -> TagSchema:
    """Refit continuous-tag normalization on the training series unless disabled or resuming"""
    if config.resume is not None:
        schema = load_checkpoint(config.resume).tag_schema
        logger.info(f"Using the tag schema stored in {config.resume}")
        return schema
    if not config.train.refit_normalization:
        return tag_schema
    return fit_normalization(tag_schema, collect_tag_maps(train_series.sources, tag_schema.keywords))


def run_training(config: RunConfig, train_series: LabeledSeries, val_series: Optional[LabeledSeries],
                 tag_schema: TagSchema, out_dir: Path) -> TrainResult:
    label_schema = LabelSchema.build(config.train.mode, train_series.class_names)
    schema = prepare_schema(config, tag_schema, train_series)
    S = config.train.resolved_slices
    train_set = SeriesDataset(train_series, S, schema)
    val_set = SeriesDataset(val_series, S, schema) if val_series is not None else None
    result = train(config, train_set, val_set, label_schema, schema, out_dir)

    tally = train_set.warnings
    if val_set is not None:
        tally.merge(val_set.warnings.counts)
    if tally.total:
        logger.warning(f"⚠️  ingestion warnings: {tally.as_list()}")
    return result


# ============================================================================
# CROSS-VALIDATION
# ============================================================================

@dataclass
class CrossValResult:
    folds: FoldSplit
    fold_reports: List[Dict[str, MetricsReport]]
    summary: FoldSummary
    fold_scores: List[Dict[str, float]]


def run_crossval(config: RunConfig, series: LabeledSeries, tag_schema: TagSchema, out_dir: Path) -> CrossValResult:
    """
    Train one model per patient-level fold and evaluate it on the held-out fold.
    Writes folds.json, fold_<i>/ run directories with test reports, and crossval_summary.txt.
    """
    k = config.folds
    folds = stratified_patient_folds(list(zip(series.patient_ids, series.labels)), k, config.train.seed)
    if not folds.check_disjoint(series.patient_ids):
        raise ConfigurationError("fold assignment is not patient-disjoint")
    folds.save(out_dir / "folds.json")
    logger.info(f"✅ {k} folds over {len(folds.assignments)} patients are patient-disjoint")

    label_schema = LabelSchema.build(config.train.mode, series.class_names)
    fold_reports: List[Dict[str, MetricsReport]] = []
    fold_scores: List[Dict[str, float]] = []
    for fold in range(k):
        logger.info("=" * 80)
        logger.info(f"📁 Fold {fold + 1}/{k}")
        logger.info("=" * 80)
        train_idx, test_idx = folds.split_indices(series.patient_ids, fold)
        train_series, test_series = series.subset(train_idx), series.subset(test_idx)
        inner_train, inner_val = holdout_split(train_series, config.train.val_folds, config.train.seed)

        fold_dir = out_dir / f"fold_{fold}"
        result = run_training(config, inner_train, inner_val, tag_schema, fold_dir)
        schema = load_checkpoint(result.checkpoint_path).tag_schema
        evaluation = evaluate_series(result.model, test_series, schema, label_schema, config.train.resolved_slices,
                                     config.train.batch_size)
        write_reports(fold_dir, "test_report", evaluation.reports, header=f"Fold {fold} test")

        primary = _primary_report(evaluation.reports)
        fold_reports.append(evaluation.reports)
        fold_scores.append({
            "fold": fold,
            "precision": primary.weighted.precision * 100.0,
            "recall": primary.weighted.recall * 100.0,
            "f1": primary.weighted.f1 * 100.0,
        })
        logger.info(f"📊 fold {fold}: test weighted F1 {primary.weighted.f1:.4f}")

    summary = summarize_folds([_primary_report(r) for r in fold_reports])
    write_fold_summary(out_dir, summary, fold_scores)
    return CrossValResult(folds=folds, fold_reports=fold_reports, summary=summary, fold_scores=fold_scores)


def _primary_report(reports: Dict[str, MetricsReport]) -> MetricsReport:
    """The joint head, or the first head of a multilabel schema"""
    return reports.get("joint") or next(iter(reports.values()))


# ============================================================================
# EVALUATION
# ============================================================================

def check_schema(model: SeriesModel, tag_schema: TagSchema) -> None:
    """Samples must be built with the schema whose fingerprint the model was saved with"""
    fingerprint = tag_schema.fingerprint()
    if model.schema_fingerprint and fingerprint != model.schema_fingerprint:
        raise SchemaMismatchError(
            f"tag schema {fingerprint[:12]} does not match the model's schema {model.schema_fingerprint[:12]}"
        )


def evaluate_series(model: SeriesModel, series: LabeledSeries, tag_schema: TagSchema, label_schema: LabelSchema,
                    S: int, batch_size: int) -> EvaluationResult:
    check_schema(model, tag_schema)
    dataset = SeriesDataset(series, S, tag_schema)
    loader = make_loader(dataset, label_schema, batch_size, shuffle=False)
    return evaluate_model(model, loader, label_schema)


def map_joint_result(result: EvaluationResult, label_schema: LabelSchema) -> Tuple[Dict[str, MetricsReport],
                                                                                    Dict[str, np.ndarray],
                                                                                    Dict[str, np.ndarray]]:
    """Project joint-class predictions and targets onto the multilabel heads and report per head"""
    multilabel = LabelSchema.multilabel()
    if list(label_schema.joint_classes) != list(multilabel.joint_classes):
        raise ConfigurationError("label map 'duke' needs a model trained on the 13 joint classes")
    predictions = targets_as_arrays(encode_targets(result.predictions["joint"].tolist(), multilabel), multilabel)
    targets = targets_as_arrays(encode_targets(result.targets["joint"].tolist(), multilabel), multilabel)
    return head_reports(predictions, targets, multilabel), predictions, targets


def evaluate_checkpoint(config: RunConfig, checkpoint: Checkpoint, model: SeriesModel,
                        out_dir: Path) -> Dict[str, MetricsReport]:
    """
    Evaluate a restored model on the run's data root. With label_map='duke' a joint model
    is scored per multilabel head. A schema file given with the run must match the checkpoint.
    """
    tag_schema = load_schema(config.schema_path) if config.schema_path is not None else checkpoint.tag_schema
    check_schema(model, tag_schema)
    series, tally = load_labeled_data(config, tag_schema,
                                      class_names=list(checkpoint.label_schema.joint_classes))
    if tally.total:
        logger.warning(f"⚠️  ingestion warnings: {tally.as_list()}")
    S = config.train.slices or checkpoint.train_config.resolved_slices
    result = evaluate_series(model, series, tag_schema, checkpoint.label_schema, S,
                             config.train.batch_size)

    reports, predictions, targets = result.reports, result.predictions, result.targets
    if config.label_map == "duke" and checkpoint.label_schema.mode == "joint":
        reports, predictions, targets = map_joint_result(result, checkpoint.label_schema)

    write_reports(out_dir, "eval_report", reports, header=f"Evaluation of {config.checkpoint}")
    write_predictions(out_dir, "predictions", result.series_uids, predictions, targets)
    return reports


def run_summary(reports: Dict[str, MetricsReport]) -> Dict[str, Any]:
    return {name: round(r.weighted.f1, 6) for name, r in reports.items()}
