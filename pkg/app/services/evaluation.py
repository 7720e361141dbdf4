"""
Classification metrics.

Precision, recall and F1 are computed per class from the confusion matrix; a zero
denominator gives 0. Weighted scores average the per-class values by support.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from app.errors import LabelError
from app.services.labels import IGNORE_INDEX, LabelSchema

logger = logging.getLogger(__name__)

ZERO_DIVISION_NOTE = "precision/recall with an empty denominator are reported as 0"
TABLE_HEADER = "Precision (%) & Recall (%) & F1 (%)"


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class WeightedScores:
    precision: float
    recall: float
    f1: float


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _weighted(values: np.ndarray, support: np.ndarray) -> float:
    total = support.sum()
    return float((values * support).sum() / total) if total > 0 else 0.0


@dataclass(frozen=True)
class MetricsReport:
    classes: Tuple[str, ...]
    per_class: Dict[str, ClassMetrics]
    weighted: WeightedScores
    confusion: np.ndarray
    accuracy: float = 0.0

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, classes: Sequence[str]) -> "MetricsReport":
        """Rebuild the full report from a C x C confusion matrix (rows = truth, columns = prediction)"""
        confusion = np.asarray(confusion, dtype=np.int64)
        if confusion.shape != (len(classes), len(classes)):
            raise ValueError(f"confusion shape {confusion.shape} does not match {len(classes)} classes")
        tp = np.diag(confusion).astype(np.float64)
        support = confusion.sum(axis=1)
        predicted = confusion.sum(axis=0)

        precision = _safe_divide(tp, predicted)
        recall = _safe_divide(tp, support)
        f1 = _safe_divide(2 * precision * recall, precision + recall)

        per_class = {
            name: ClassMetrics(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
            for i, name in enumerate(classes)
        }
        total = confusion.sum()
        return cls(
            classes=tuple(classes),
            per_class=per_class,
            weighted=WeightedScores(
                precision=_weighted(precision, support),
                recall=_weighted(recall, support),
                f1=_weighted(f1, support),
            ),
            confusion=confusion,
            accuracy=float(tp.sum() / total) if total > 0 else 0.0,
        )

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"class": name, "precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
            for name, m in self.per_class.items()
        ]
        return pd.DataFrame(rows, columns=["class", "precision", "recall", "f1", "support"])

    def to_record(self) -> Dict[str, Any]:
        return {
            "classes": list(self.classes),
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for name, m in self.per_class.items()
            },
            "weighted": {"precision": self.weighted.precision, "recall": self.weighted.recall, "f1": self.weighted.f1},
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }

    def to_text(self, title: str = "") -> str:
        lines = []
        if title:
            lines += [title, "-" * len(title)]
        lines.append(self.to_frame().to_string(index=False, float_format=lambda x: f"{x:.4f}"))
        lines.append(
            f"weighted  precision={self.weighted.precision:.4f}  recall={self.weighted.recall:.4f}  "
            f"f1={self.weighted.f1:.4f}"
        )
        lines.append(f"note: {ZERO_DIVISION_NOTE}")
        return "\n".join(lines)


def _to_indices(items: Sequence[Union[str, int]], classes: Sequence[str], what: str) -> np.ndarray:
    lookup = {name: i for i, name in enumerate(classes)}
    out = np.empty(len(items), dtype=np.int64)
    for j, item in enumerate(items):
        if isinstance(item, str):
            if item not in lookup:
                raise LabelError(f"unknown {what} value '{item}' (classes: {list(classes)})")
            out[j] = lookup[item]
        else:
            idx = int(item)
            if not 0 <= idx < len(classes):
                raise LabelError(f"{what} index {idx} outside [0, {len(classes)})")
            out[j] = idx
    return out


def weighted_f1(predictions: Sequence[Union[str, int]], labels: Sequence[Union[str, int]],
                classes: Sequence[str]) -> MetricsReport:
    """
    Per-class and support-weighted precision/recall/F1.

    predictions and labels may hold class names or class indices.
    """
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("weighted_f1 needs at least one sample")
    y_pred = _to_indices(predictions, classes, "prediction")
    y_true = _to_indices(labels, classes, "label")
    confusion = confusion_matrix(y_true, y_pred, labels=list(range(len(classes))))
    return MetricsReport.from_confusion(confusion, classes)


def flag_report(pred_flags: np.ndarray, true_flags: np.ndarray, names: Sequence[str]) -> MetricsReport:
    """
    One-vs-rest report for a multi-flag head. Each flag is scored as its positive class;
    support is the number of positives and the confusion is the stack of per-flag 2x2 matrices.
    """
    pred = np.asarray(pred_flags, dtype=np.int64).reshape(-1, len(names))
    true = np.asarray(true_flags, dtype=np.int64).reshape(-1, len(names))
    if pred.shape != true.shape:
        raise ValueError(f"flag shapes differ: {pred.shape} vs {true.shape}")

    per_class: Dict[str, ClassMetrics] = {}
    stacked = []
    for k, name in enumerate(names):
        cm = confusion_matrix(true[:, k], pred[:, k], labels=[0, 1])
        stacked.append(cm)
        per_class[name] = MetricsReport.from_confusion(cm, ["0", "1"]).per_class["1"]

    precision = np.array([m.precision for m in per_class.values()])
    recall = np.array([m.recall for m in per_class.values()])
    f1 = np.array([m.f1 for m in per_class.values()])
    support = np.array([m.support for m in per_class.values()], dtype=np.float64)
    exact = float(np.mean(np.all(pred == true, axis=1))) if len(true) else 0.0
    return MetricsReport(
        classes=tuple(names),
        per_class=per_class,
        weighted=WeightedScores(_weighted(precision, support), _weighted(recall, support), _weighted(f1, support)),
        confusion=np.stack(stacked),
        accuracy=exact,
    )


@dataclass(frozen=True)
class FoldSummary:
    """mean ± std (percent) of weighted precision, recall and F1 over folds"""
    precision: Tuple[float, float]
    recall: Tuple[float, float]
    f1: Tuple[float, float]
    folds: int

    def as_row(self) -> str:
        return " & ".join(f"{mean:.2f} $\\pm$ {std:.2f}" for mean, std in (self.precision, self.recall, self.f1))

    def to_text(self) -> str:
        return f"{TABLE_HEADER}\n{self.as_row()}\n({self.folds} folds, std over folds with ddof=1)"


def summarize_folds(reports: Sequence[MetricsReport]) -> FoldSummary:
    if not reports:
        raise ValueError("summarize_folds needs at least one report")
    scores = np.array([[r.weighted.precision, r.weighted.recall, r.weighted.f1] for r in reports]) * 100.0
    mean = scores.mean(axis=0)
    std = scores.std(axis=0, ddof=1) if len(reports) > 1 else np.zeros(3)
    return FoldSummary(
        precision=(float(mean[0]), float(std[0])),
        recall=(float(mean[1]), float(std[1])),
        f1=(float(mean[2]), float(std[2])),
        folds=len(reports),
    )


def head_reports(predictions: Dict[str, np.ndarray], targets: Dict[str, np.ndarray],
                 label_schema: LabelSchema) -> Dict[str, MetricsReport]:
    """
    One report per output head. Samples whose target is the ignore marker (e.g. the
    plane of a localizer) are left out of that head's report.
    """
    reports: Dict[str, MetricsReport] = {}
    for spec in label_schema.heads:
        pred = predictions[spec.name]
        true = targets[spec.name]
        if spec.kind == "flags":
            reports[spec.name] = flag_report(pred, true, spec.classes)
            continue
        keep = true != IGNORE_INDEX
        if not keep.any():
            logger.warning(f"⚠️  head '{spec.name}': no applicable samples, report skipped")
            continue
        reports[spec.name] = weighted_f1(pred[keep].tolist(), true[keep].tolist(), spec.classes)
    return reports


def selection_score(reports: Dict[str, MetricsReport]) -> float:
    """Weighted F1 of a joint head, or the mean over heads for multilabel"""
    if not reports:
        return 0.0
    return float(np.mean([r.weighted.f1 for r in reports.values()]))


def reports_text(reports: Dict[str, MetricsReport]) -> str:
    return "\n\n".join(report.to_text(title=name) for name, report in reports.items())
