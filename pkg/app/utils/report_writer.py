"""
Report writer - structured text and machine-readable report files for a run directory
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd

from app.services.evaluation import FoldSummary, MetricsReport, reports_text

logger = logging.getLogger(__name__)


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_reports(out_dir: Path, name: str, reports: Dict[str, MetricsReport],
                  header: Optional[str] = None) -> Path:
    """<name>.txt with one section per head and <name>.json with the same content"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = reports_text(reports)
    if header:
        text = f"{header}\n{'=' * len(header)}\n\n{text}"
    text_path = out_dir / f"{name}.txt"
    text_path.write_text(text + "\n", encoding="utf-8")
    (out_dir / f"{name}.json").write_text(
        json.dumps({head: r.to_record() for head, r in reports.items()}, indent=2), encoding="utf-8"
    )
    logger.info(f"📄 Report written: {text_path}")
    return text_path


def write_fold_summary(out_dir: Path, summary: FoldSummary, fold_scores: List[Dict[str, float]]) -> Path:
    frame = pd.DataFrame(fold_scores)
    text = "\n".join([
        "Per-fold weighted scores (%)",
        frame.to_string(index=False, float_format=lambda x: f"{x:.2f}"),
        "",
        summary.to_text(),
    ])
    path = Path(out_dir) / "crossval_summary.txt"
    path.write_text(text + "\n", encoding="utf-8")
    logger.info(f"📄 Cross-validation summary written: {path}")
    return path


def write_predictions(out_dir: Path, name: str, series_uids: List[str],
                      predictions: Dict[str, Any], targets: Dict[str, Any]) -> Path:
    """CSV with one row per series: predicted and true value of every head"""
    columns: Dict[str, Any] = {"series_uid": series_uids}
    for head in predictions:
        columns[f"{head}_pred"] = [_cell(v) for v in predictions[head]]
        columns[f"{head}_true"] = [_cell(v) for v in targets[head]]
    path = Path(out_dir) / f"{name}.csv"
    pd.DataFrame(columns).to_csv(path, index=False)
    return path


def _cell(value: Any) -> Any:
    if hasattr(value, "tolist"):
        value = value.tolist()
    if isinstance(value, list):
        return " ".join(str(int(v)) for v in value)
    return value
