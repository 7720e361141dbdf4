"""
Metrics, fold assignment, label mapping and the signed-rank test.
"""

import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from app.errors import ConfigurationError, LabelError, UndefinedStatisticError
from app.services.evaluation import (
    MetricsReport,
    flag_report,
    head_reports,
    selection_score,
    summarize_folds,
    weighted_f1,
)
from app.services.labels import (
    IGNORE_INDEX,
    JOINT_CLASSES,
    LabelSchema,
    decode_predictions,
    encode_targets,
    map_duke_to_multilabel,
    targets_as_arrays,
)
from app.services.splits import stratified_patient_folds
from app.services.statistics import wilcoxon_signed_rank


# ============================================================================
# METRICS
# ============================================================================

def test_weighted_f1_worked_example():
    report = weighted_f1(["a", "b", "b", "b"], ["a", "a", "b", "b"], ["a", "b"])
    a, b = report.per_class["a"], report.per_class["b"]
    assert (a.precision, a.recall) == (1.0, 0.5)
    assert a.f1 == pytest.approx(2 / 3)
    assert b.precision == pytest.approx(2 / 3) and b.recall == 1.0 and b.f1 == pytest.approx(0.8)
    assert report.weighted.f1 == pytest.approx(0.7333, abs=1e-4)
    np.testing.assert_array_equal(report.confusion, [[1, 1], [0, 2]])


def test_weighted_f1_extremes():
    assert weighted_f1([0, 1, 2], [0, 1, 2], ["x", "y", "z"]).weighted.f1 == 1.0
    assert weighted_f1([1, 1, 0], [0, 0, 1], ["x", "y"]).weighted.f1 == 0.0


def test_never_predicted_class_scores_zero_precision():
    report = weighted_f1([0, 0, 0], [0, 0, 1], ["x", "y"])
    assert report.per_class["y"].precision == 0.0
    assert report.per_class["y"].f1 == 0.0


def test_weighted_f1_errors():
    with pytest.raises(LabelError):
        weighted_f1(["a", "q"], ["a", "a"], ["a", "b"])
    with pytest.raises(LabelError):
        weighted_f1([0, 5], [0, 0], ["a", "b"])
    with pytest.raises(ValueError):
        weighted_f1([0], [0, 1], ["a", "b"])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
@settings(max_examples=100, deadline=None)
def test_report_invariants(pairs):
    preds, labels = zip(*pairs)
    report = weighted_f1(list(preds), list(labels), ["a", "b", "c", "d"])
    support = np.array([m.support for m in report.per_class.values()])
    f1 = np.array([m.f1 for m in report.per_class.values()])
    np.testing.assert_array_equal(report.confusion.sum(axis=1), support)
    assert report.weighted.f1 == pytest.approx(float((support * f1).sum() / support.sum()))
    rebuilt = MetricsReport.from_confusion(report.confusion, report.classes)
    assert rebuilt.weighted == report.weighted


def test_flag_report():
    pred = np.array([[1, 0], [1, 1], [0, 0]])
    true = np.array([[1, 0], [0, 1], [1, 0]])
    report = flag_report(pred, true, ["T1", "T2"])
    assert report.per_class["T1"].support == 2
    assert report.per_class["T1"].precision == pytest.approx(0.5)
    assert report.per_class["T2"].f1 == 1.0
    assert report.confusion.shape == (2, 2, 2)
    assert report.accuracy == pytest.approx(1 / 3)


def test_summarize_folds_uses_sample_std():
    reports = [weighted_f1(p, l, ["a", "b"]) for p, l in [
        ([0, 1], [0, 1]), ([0, 0], [0, 1]), ([1, 1], [0, 1]),
    ]]
    f1 = [r.weighted.f1 * 100 for r in reports]
    summary = summarize_folds(reports)
    assert summary.f1[0] == pytest.approx(np.mean(f1))
    assert summary.f1[1] == pytest.approx(np.std(f1, ddof=1))
    assert summary.folds == 3
    assert "$\\pm$" in summary.as_row()


def test_head_reports_drop_inapplicable_targets():
    schema = LabelSchema.multilabel()
    labels = [0, 5, 12, 11]
    targets = targets_as_arrays(encode_targets(labels, schema), schema)
    assert targets["plane"][2] == IGNORE_INDEX
    reports = head_reports(targets, targets, schema)
    assert set(reports) == {"sequence_type", "mrcp", "plane", "contrast_phase", "localizer"}
    assert sum(m.support for m in reports["plane"].per_class.values()) == 3
    assert selection_score(reports) == pytest.approx(1.0)


def test_decode_predictions_layout():
    schema = LabelSchema.multilabel()
    logits = {
        "sequence_type": torch.tensor([[1.0, -1, -1, -1, 2.0, -1]]),
        "mrcp": torch.tensor([[-0.5]]),
        "plane": torch.tensor([[0.1, 0.9, 0.0]]),
        "contrast_phase": torch.tensor([[0.0, 0.0, 0.0, 0.0, 0.0, 3.0]]),
        "localizer": torch.tensor([[0.2]]),
    }
    decoded = decode_predictions(logits, schema)
    np.testing.assert_array_equal(decoded["sequence_type"], [[1, 0, 0, 0, 1, 0]])
    assert decoded["mrcp"].tolist() == [0]
    assert decoded["plane"].tolist() == [1]
    assert decoded["contrast_phase"].tolist() == [5]
    assert decoded["localizer"].tolist() == [1]


# ============================================================================
# LABEL MAPPING
# ============================================================================

def test_duke_mapping_examples():
    t2 = map_duke_to_multilabel("T2_AX")
    assert t2.sequence_type == {"T2"} and t2.plane == "AX" and not t2.mrcp and not t2.localizer
    assert map_duke_to_multilabel("T1_ART").contrast_phase == "ART"
    localizer = map_duke_to_multilabel("LOCALIZER")
    assert localizer.localizer and localizer.contrast_phase == "NONE"
    assert map_duke_to_multilabel("T1_LATE").contrast_phase == "TRANS"
    assert map_duke_to_multilabel("MRCP").mrcp


def test_every_joint_class_maps():
    for name in JOINT_CLASSES:
        map_duke_to_multilabel(name)
    with pytest.raises(LabelError):
        map_duke_to_multilabel("T1_HEPATOBILIARY")


def test_label_schema_validation():
    assert LabelSchema.joint().num_classes == 13
    with pytest.raises(ValueError):
        LabelSchema.joint(["a", "a"])
    with pytest.raises(LabelError):
        LabelSchema.build("multilabel", ["a", "b"])
    assert LabelSchema.multilabel().head("plane").size == 3
    assert LabelSchema.multilabel().head("mrcp").size == 1


# ============================================================================
# FOLDS
# ============================================================================

def synthetic_cohort(n_patients: int, n_classes: int, seed: int, min_series: int = 1, max_series: int = 4):
    rng = np.random.default_rng(seed)
    series = []
    for p in range(n_patients):
        for _ in range(rng.integers(min_series, max_series + 1)):
            series.append((f"P{p:03d}", int(rng.integers(n_classes))))
    return series


def test_one_patient_per_fold():
    folds = stratified_patient_folds([("a", 0), ("b", 1), ("c", 0)], k=3)
    assert sorted(folds.assignments.values()) == [0, 1, 2]


def test_folds_are_deterministic_per_seed():
    series = synthetic_cohort(40, 5, seed=1)
    assert stratified_patient_folds(series, 5, seed=7) == stratified_patient_folds(series, 5, seed=7)


def test_folds_are_class_balanced():
    series = synthetic_cohort(100, 13, seed=2, min_series=6, max_series=10)
    folds = stratified_patient_folds(series, 5, seed=0)
    labels = np.array([c for _, c in series])
    fold_of = np.array([folds.fold_of(p) for p, _ in series])
    target = np.bincount(labels, minlength=13) / 5
    for f in range(5):
        counts = np.bincount(labels[fold_of == f], minlength=13)
        # within 20% of the per-fold target, or two series for the rarest classes
        assert np.all(np.abs(counts - target) <= np.maximum(0.2 * target, 2.0))


def test_folds_are_patient_disjoint():
    series = synthetic_cohort(30, 4, seed=3)
    folds = stratified_patient_folds(series, 4, seed=1)
    patient_ids = [p for p, _ in series]
    assert folds.check_disjoint(patient_ids)
    for f in range(4):
        train, test = folds.split_indices(patient_ids, f)
        assert not {patient_ids[i] for i in train} & {patient_ids[i] for i in test}
        assert sorted(train + test) == list(range(len(series)))


def test_fold_errors():
    with pytest.raises(ConfigurationError):
        stratified_patient_folds([("a", 0), ("b", 1)], k=3)
    with pytest.raises(ConfigurationError):
        stratified_patient_folds([("a", 0), ("b", 1)], k=1)


# ============================================================================
# SIGNED-RANK TEST
# ============================================================================

def enumerated_p(diffs) -> float:
    """Two-sided p by listing every sign assignment"""
    diffs = np.asarray([d for d in diffs if d != 0], dtype=float)
    ranks = rankdata(np.abs(diffs))
    observed = ranks[diffs > 0].sum()
    totals = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=len(ranks))]
    totals = np.array(totals)
    lower = np.mean(totals <= observed + 1e-9)
    upper = np.mean(totals >= observed - 1e-9)
    return min(1.0, 2 * min(lower, upper))


def test_all_positive_differences_five_pairs():
    result = wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1])
    assert result.p_value == pytest.approx(0.0625)
    assert result.statistic == 0.0
    assert result.method == "exact"


def test_balanced_differences():
    result = wilcoxon_signed_rank([1.0, 0.0], [0.0, 1.0])
    assert result.p_value == pytest.approx(1.0)


def test_identical_scores_are_undefined():
    with pytest.raises(UndefinedStatisticError):
        wilcoxon_signed_rank([0.5, 0.6], [0.5, 0.6])


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=10).filter(lambda d: any(d)))
@settings(max_examples=80, deadline=None)
def test_exact_p_matches_enumeration(diffs):
    a = np.array(diffs, dtype=float)
    result = wilcoxon_signed_rank(a, np.zeros_like(a))
    assert result.p_value == pytest.approx(enumerated_p(diffs), abs=1e-12)
    assert result.n == sum(1 for d in diffs if d)


def test_large_samples_use_the_normal_approximation():
    rng = np.random.default_rng(0)
    a = rng.normal(1.0, 1.0, size=40)
    result = wilcoxon_signed_rank(a, np.zeros(40))
    assert result.method == "normal"
    assert 0.0 <= result.p_value < 0.01
