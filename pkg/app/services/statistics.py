"""
Paired comparison of per-fold (or per-run) scores with the Wilcoxon signed-rank test.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from app.errors import UndefinedStatisticError

logger = logging.getLogger(__name__)

EXACT_MAX_N = 20


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float    # min(W+, W-)
    p_value: float      # two-sided
    n: int              # non-zero differences used
    method: str         # "exact" or "normal"


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """
    Two-sided p from the exact null distribution of W+ over all 2^n sign assignments.
    Doubled ranks are integers even with averaged ties, so the distribution is a count table.
    """
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    probabilities = counts / counts.sum()
    observed = int(np.rint(2 * w_plus))
    lower = probabilities[:observed + 1].sum()
    upper = probabilities[observed:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    z = (w_plus - mean) / np.sqrt(variance)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def wilcoxon_signed_rank(scores_a: Sequence[float], scores_b: Sequence[float]) -> WilcoxonResult:
    """
    Two-sided Wilcoxon signed-rank test on paired scores.
    Zero differences are dropped and tied magnitudes get averaged ranks; the p-value is
    exact for up to 20 non-zero differences and from the normal approximation above.

    Raises:
        UndefinedStatisticError: every difference is zero
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError(f"wilcoxon_signed_rank needs two equal-length non-empty score lists, got {a.shape} and {b.shape}")

    diff = a - b
    diff = diff[diff != 0]
    if len(diff) == 0:
        raise UndefinedStatisticError("all paired differences are zero; the signed-rank test is undefined")

    ranks = rankdata(np.abs(diff), method="average")
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())

    if len(diff) <= EXACT_MAX_N:
        p, method = _exact_p(ranks, w_plus), "exact"
    else:
        p, method = _normal_p(ranks, w_plus), "normal"
    return WilcoxonResult(statistic=min(w_plus, w_minus), p_value=p, n=len(diff), method=method)
