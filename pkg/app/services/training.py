"""
Training: losses, learning-rate schedule, gradient clamping and the epoch loop.

Recipe: AdamW (decoupled weight decay on matrices only), linear warmup from 0 to base_lr
over warmup_fraction of the steps then cosine decay to 0, element-wise gradient clamping,
best checkpoint by validation weighted F1.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.utils.class_weight import compute_class_weight
from torch.utils.data import DataLoader
from tqdm import tqdm

from app.config import RunConfig
from app.errors import LabelError, NumericError
from app.network.Batch import collate_samples
from app.network.ModelFactory import build_model
from app.network.SeriesClassifier import SeriesModel
from app.services.checkpoint import Checkpoint, load_checkpoint, load_weights, save_checkpoint
from app.services.datasets import SeriesDataset
from app.services.evaluation import MetricsReport, head_reports, selection_score
from app.services.labels import IGNORE_INDEX, LabelSchema, decode_predictions, targets_as_arrays
from app.services.metadata_schema import TagSchema
from app.utils.report_writer import write_jsonl

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
METRICS_LOG = "metrics.jsonl"
LR_TRACE = "lr_trace.jsonl"


# ============================================================================
# SCHEDULE, CLIPPING, LOSS
# ============================================================================

def lr_at_step(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup from 0 to base_lr over warmup_fraction * total_steps, then cosine decay to 0"""
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(parameters: Iterable[torch.nn.Parameter], lo: float, hi: float) -> List[torch.Tensor]:
    """Clamp every gradient element into [lo, hi] in place"""
    grads = []
    for p in parameters:
        if p.grad is not None:
            p.grad.clamp_(lo, hi)
            grads.append(p.grad)
    return grads


def compute_loss(logits: Dict[str, torch.Tensor], targets: Dict[str, torch.Tensor], label_schema: LabelSchema,
                 class_weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Sum over heads: softmax cross-entropy for softmax heads (not-applicable targets ignored),
    binary cross-entropy with logits for binary and flag heads.
    """
    total = None
    for spec in label_schema.heads:
        block = logits[spec.name]
        target = targets[spec.name]
        if spec.kind == "softmax":
            valid = target != IGNORE_INDEX
            if ((target[valid] < 0) | (target[valid] >= spec.size)).any():
                raise LabelError(f"head '{spec.name}': target outside [0, {spec.size})")
            if not valid.any():
                continue
            weight = class_weights if (class_weights is not None and spec.name == "joint") else None
            term = F.cross_entropy(block[valid], target[valid], weight=weight)
        else:
            if ((target != 0) & (target != 1)).any():
                raise LabelError(f"head '{spec.name}': binary targets must be 0 or 1")
            term = F.binary_cross_entropy_with_logits(block, target.to(block.dtype).reshape(block.shape))
        total = term if total is None else total + term
    if total is None:
        first = next(iter(logits.values()))
        total = first.sum() * 0.0
    return total


def build_optimizer(model: torch.nn.Module, base_lr: float, weight_decay: float) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for param in model.parameters():
        if not param.requires_grad:
            continue
        (decay if param.ndim >= 2 else no_decay).append(param)
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=base_lr,
    )


def joint_class_weights(labels: List[int], n_classes: int) -> torch.Tensor:
    """Inverse-frequency weights; classes absent from training get weight 1"""
    present = np.unique(labels)
    weights = np.ones(n_classes, dtype=np.float64)
    weights[present] = compute_class_weight("balanced", classes=present, y=np.asarray(labels))
    return torch.tensor(weights, dtype=torch.float32)


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))
    return torch.Generator().manual_seed(seed)


# ============================================================================
# EVALUATION PASS
# ============================================================================

@dataclass
class EvaluationResult:
    loss: float
    reports: Dict[str, MetricsReport]
    predictions: Dict[str, np.ndarray]
    targets: Dict[str, np.ndarray]
    series_uids: List[str] = field(default_factory=list)

    @property
    def score(self) -> float:
        return selection_score(self.reports)


def make_loader(dataset: SeriesDataset, label_schema: LabelSchema, batch_size: int, shuffle: bool,
                generator: Optional[torch.Generator] = None, num_workers: int = 0,
                dtype: torch.dtype = torch.float32) -> DataLoader:
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        generator=generator,
        num_workers=num_workers,
        collate_fn=partial(collate_samples, label_schema=label_schema, dtype=dtype),
    )


def evaluate_model(model: SeriesModel, loader: DataLoader, label_schema: LabelSchema) -> EvaluationResult:
    model.eval()
    losses, weights = [], []
    preds: Dict[str, List[np.ndarray]] = {h.name: [] for h in label_schema.heads}
    trues: Dict[str, List[np.ndarray]] = {h.name: [] for h in label_schema.heads}
    uids: List[str] = []
    with torch.no_grad():
        for batch in loader:
            output = model(batch)
            losses.append(float(compute_loss(output.logits, batch["targets"], label_schema)))
            weights.append(len(batch["series_uids"]))
            for name, arr in decode_predictions(output.logits, label_schema).items():
                preds[name].append(arr)
            for name, arr in targets_as_arrays(batch["targets"], label_schema).items():
                trues[name].append(arr)
            uids += batch["series_uids"]

    predictions = {k: np.concatenate(v) for k, v in preds.items()}
    targets = {k: np.concatenate(v) for k, v in trues.items()}
    return EvaluationResult(
        loss=float(np.average(losses, weights=weights)),
        reports=head_reports(predictions, targets, label_schema),
        predictions=predictions,
        targets=targets,
        series_uids=uids,
    )


# ============================================================================
# TRAINING LOOP
# ============================================================================

@dataclass
class TrainResult:
    checkpoint_path: Path
    best_epoch: int
    best_score: float
    metrics: List[Dict[str, Any]]
    model: SeriesModel


def train(config: RunConfig, train_set: SeriesDataset, val_set: Optional[SeriesDataset],
          label_schema: LabelSchema, tag_schema: TagSchema, out_dir: Path) -> TrainResult:
    """
    Train one model and write model.ckpt (best epoch), metrics.jsonl and lr_trace.jsonl to out_dir.

    Without a validation set the best epoch is chosen on the training metrics.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    tc = config.train
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    generator = seed_everything(tc.seed)
    model = build_model(config.model, tc.baseline, tag_schema.feature_count, label_schema)
    model.schema_fingerprint = tag_schema.fingerprint()
    if config.resume is not None:
        load_weights(model, load_checkpoint(config.resume))
        logger.info(f"Resumed weights from {config.resume}")

    loader = make_loader(train_set, label_schema, tc.batch_size, shuffle=True,
                         generator=generator, num_workers=tc.num_workers)
    eval_loader = make_loader(train_set, label_schema, tc.batch_size, shuffle=False, num_workers=tc.num_workers)
    val_loader = (make_loader(val_set, label_schema, tc.batch_size, shuffle=False, num_workers=tc.num_workers)
                  if val_set is not None and len(val_set) > 0 else None)

    class_weights = None
    if tc.class_weighting and label_schema.mode == "joint":
        class_weights = joint_class_weights(train_set.series.labels, label_schema.num_classes)

    optimizer = build_optimizer(model, tc.base_lr, tc.weight_decay)
    total_steps = tc.epochs * len(loader)
    step = 0
    metrics: List[Dict[str, Any]] = []
    lr_trace: List[Dict[str, Any]] = []
    best_score, best_epoch, best_state = -1.0, -1, None

    logger.info("=" * 80)
    logger.info(f"🚀 Training {model.variant} for {tc.epochs} epochs, {total_steps} steps, S={train_set.S}")
    logger.info("=" * 80)

    for epoch in range(tc.epochs):
        model.train()
        for batch_index, batch in enumerate(tqdm(loader, desc=f"epoch {epoch + 1}/{tc.epochs}", leave=False)):
            lr = lr_at_step(step, total_steps, tc.base_lr, tc.warmup_fraction)
            for group in optimizer.param_groups:
                group["lr"] = lr

            optimizer.zero_grad(set_to_none=True)
            output = model(batch)
            loss = compute_loss(output.logits, batch["targets"], label_schema, class_weights)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index} (series {batch['series_uids'][:3]}...)"
                )
            loss.backward()
            clip_gradients(model.parameters(), tc.clip_lo, tc.clip_hi)
            optimizer.step()

            lr_trace.append({"step": step, "epoch": epoch, "lr": lr})
            step += 1

        train_eval = evaluate_model(model, eval_loader, label_schema)
        metrics.append({"epoch": epoch, "split": "train", "loss": train_eval.loss,
                        "weighted_f1": train_eval.score, "lr": lr_trace[-1]["lr"]})
        current = train_eval
        if val_loader is not None:
            current = evaluate_model(model, val_loader, label_schema)
            metrics.append({"epoch": epoch, "split": "val", "loss": current.loss,
                            "weighted_f1": current.score, "lr": lr_trace[-1]["lr"]})

        logger.info(
            f"📊 epoch {epoch + 1}: train loss={train_eval.loss:.4f} wF1={train_eval.score:.4f}"
            + (f" | val loss={current.loss:.4f} wF1={current.score:.4f}" if val_loader is not None else "")
        )
        if current.score > best_score:
            best_score, best_epoch = current.score, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    checkpoint = Checkpoint.from_model(model, config.model, tc, tag_schema,
                                       extra={"best_epoch": best_epoch, "best_score": best_score})
    checkpoint_path = save_checkpoint(checkpoint, out_dir / CHECKPOINT_NAME)
    write_jsonl(out_dir / METRICS_LOG, metrics)
    write_jsonl(out_dir / LR_TRACE, lr_trace)

    logger.info(f"✅ Best epoch {best_epoch + 1} with weighted F1 {best_score:.4f}; checkpoint {checkpoint_path}")
    return TrainResult(checkpoint_path=checkpoint_path, best_epoch=best_epoch, best_score=best_score,
                       metrics=metrics, model=model)
