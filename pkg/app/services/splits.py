"""
Patient-level, class-stratified k-fold assignment.

Patients are visited largest first (series count, ties in seeded random order) and each
goes to the fold where adding its per-class series counts increases the squared deviation
from the per-fold class targets the least. Ties go to the smaller fold, then the lower index.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: Dict[str, int]     # patient_id -> fold

    def fold_of(self, patient_id: str) -> int:
        return self.assignments[patient_id]

    def split_indices(self, patient_ids: Sequence[str], fold: int) -> Tuple[List[int], List[int]]:
        """(train indices, held-out indices) of a per-series patient list"""
        train, test = [], []
        for i, patient in enumerate(patient_ids):
            (test if self.assignments[patient] == fold else train).append(i)
        return train, test

    def check_disjoint(self, patient_ids: Sequence[str]) -> bool:
        """True when no patient's series fall in more than one fold"""
        seen: Dict[str, int] = {}
        for patient in patient_ids:
            fold = self.assignments[patient]
            if seen.setdefault(patient, fold) != fold:
                return False
        return True

    def save(self, path: Path) -> Path:
        path.write_text(json.dumps({"k": self.k, "assignments": self.assignments}, indent=2, sort_keys=True),
                        encoding="utf-8")
        return path


def stratified_patient_folds(series: Sequence[Tuple[str, int]], k: int, seed: int = 0) -> FoldSplit:
    """
    Args:
        series: one (patient_id, class index) pair per series
        k: number of folds (>= 2)
        seed: controls the order among patients with equal series counts
    """
    if k < 2:
        raise ConfigurationError(f"k must be at least 2, got {k}")
    patients = sorted({p for p, _ in series})
    if len(patients) < k:
        raise ConfigurationError(f"{len(patients)} patients cannot fill {k} folds")

    classes = sorted({c for _, c in series})
    class_pos = {c: i for i, c in enumerate(classes)}
    counts = {p: np.zeros(len(classes)) for p in patients}
    for patient, label in series:
        counts[patient][class_pos[label]] += 1

    totals = np.sum(list(counts.values()), axis=0)
    target = totals / k

    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    order.sort(key=lambda p: -counts[p].sum())      # stable: keeps the shuffled order among equals

    fold_counts = np.zeros((k, len(classes)))
    fold_sizes = np.zeros(k)
    fold_patients = np.zeros(k, dtype=int)
    assignments: Dict[str, int] = {}
    for n_done, patient in enumerate(order):
        x = counts[patient]
        remaining = len(order) - n_done
        empty = [f for f in range(k) if fold_patients[f] == 0]
        candidates = empty if remaining <= len(empty) else list(range(k))

        cost = [float(np.sum(x * (2 * (fold_counts[f] - target) + x))) for f in candidates]
        best = min(zip(cost, [fold_sizes[f] for f in candidates], candidates))[2]

        assignments[patient] = best
        fold_counts[best] += x
        fold_sizes[best] += x.sum()
        fold_patients[best] += 1

    logger.info(f"📊 {len(patients)} patients in {k} folds, series per fold: {fold_sizes.astype(int).tolist()}")
    return FoldSplit(k=k, assignments=assignments)
