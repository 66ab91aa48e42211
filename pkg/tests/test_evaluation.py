import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phishcnn.evaluation import (RECORD_FIELDS, ConfusionMatrix, aggregate_cv, comparison_report, compute_metrics,
                                 confusion, records_csv)

counts = st.integers(0, 500)


def report(fold, tp=90, fp=10, tn=90, fn=10, model="m", **extra):
    return compute_metrics(ConfusionMatrix(tp, fp, tn, fn), model, fold, **extra)


# --- confusion ------------------------------------------------------------

def test_all_correct():
    assert confusion([1, 1, 1, 0, 0], [1, 1, 1, 0, 0]) == ConfusionMatrix(tp=3, fp=0, tn=2, fn=0)


def test_all_predicted_phishing_on_legitimate():
    assert confusion([1] * 4, [0] * 4) == ConfusionMatrix(tp=0, fp=4, tn=0, fn=0)


def test_random_pairs_match_tally_loop():
    rng = np.random.default_rng(0)
    pred, lab = rng.integers(0, 2, 1000), rng.integers(0, 2, 1000)
    tally = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, t in zip(pred, lab):
        key = ("t" if p == t else "f") + ("p" if p == 1 else "n")
        tally[key] += 1
    cm = confusion(pred, lab)
    assert cm == ConfusionMatrix(**tally) and cm.total == 1000


def test_confusion_rejects_mismatch_and_non_binary():
    with pytest.raises(ValueError):
        confusion([1, 0], [1])
    with pytest.raises(ValueError):
        confusion([2, 0], [1, 0])


# --- metrics --------------------------------------------------------------

def test_published_precision_recall_give_published_f1():
    p, r = 0.970, 0.982
    assert abs(2 * p * r / (p + r) - 0.976) <= 0.0005
    # the same pair reached through an actual matrix
    cm = ConfusionMatrix(tp=982, fp=30, tn=1000, fn=18)
    m = compute_metrics(cm)
    assert m.precision == pytest.approx(982 / 1012) and m.recall == pytest.approx(0.982)
    assert abs(m.f1 - 0.976) <= 0.0005


def test_ninety_percent_everywhere():
    m = report(0)
    assert (m.accuracy, m.precision, m.recall, m.f1) == pytest.approx((0.9, 0.9, 0.9, 0.9))
    assert m.degenerate == ()


def test_zero_over_zero_flagged():
    m = compute_metrics(ConfusionMatrix(tp=0, fp=0, tn=5, fn=3))
    assert m.precision == 0 and "precision" in m.degenerate
    assert m.f1 == 0 and "f1" in m.degenerate
    assert m.accuracy == pytest.approx(5 / 8)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        compute_metrics(ConfusionMatrix(0, 0, 0, 0))


def test_recall_is_detection_rate():
    m = report(0, tp=982, fn=18)
    assert m.detection_rate == m.recall


@settings(max_examples=200)
@given(tp=counts, fp=counts, tn=counts, fn=counts)
def test_metric_properties(tp, fp, tn, fn):
    cm = ConfusionMatrix(tp, fp, tn, fn)
    if cm.total == 0:
        return
    m = compute_metrics(cm)
    for v in (m.accuracy, m.precision, m.recall, m.f1):
        assert 0 <= v <= 1
    assert m.f1 <= (m.precision + m.recall) / 2 + 1e-12
    if m.precision > 0 and m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
        if abs(m.precision - m.recall) > 1e-9:
            assert m.f1 < (m.precision + m.recall) / 2
    swapped = cm.swapped()
    assert (swapped.tp, swapped.fn, swapped.tn, swapped.fp) == (tn, fp, tp, fn)
    assert compute_metrics(swapped).accuracy == m.accuracy


@settings(max_examples=50)
@given(seed=st.integers(0, 10_000))
def test_metrics_invariant_to_pair_order(seed):
    rng = np.random.default_rng(seed)
    pred, lab = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    perm = rng.permutation(50)
    a, b = compute_metrics(confusion(pred, lab)), compute_metrics(confusion(pred[perm], lab[perm]))
    assert (a.accuracy, a.precision, a.recall, a.f1) == (b.accuracy, b.precision, b.recall, b.f1)


# --- aggregation ----------------------------------------------------------

def test_identical_reports_summarise_to_themselves():
    s = aggregate_cv([report(i, train_seconds=2.0, loss=0.1) for i in range(10)], k=10)
    assert (s.accuracy, s.precision, s.recall, s.f1) == pytest.approx((0.9, 0.9, 0.9, 0.9))
    assert s.train_seconds == pytest.approx(2.0) and s.loss == pytest.approx(0.1)


def test_two_fold_mean():
    s = aggregate_cv([report(0, 45, 5, 45, 5), report(1, 50, 0, 50, 0)], k=2)
    assert s.accuracy == pytest.approx(0.95)


def test_mean_f1_recomputed_from_folds():
    rng = np.random.default_rng(1)
    reports = [report(i, *rng.integers(1, 100, 4)) for i in range(10)]
    s = aggregate_cv(reports)
    assert abs(s.f1 - sum(r.f1 for r in reports) / 10) <= 1e-12
    assert s.pooled.confusion.total == sum(r.confusion.total for r in reports)


def test_duplicate_fold_and_wrong_count_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        aggregate_cv([report(0), report(0)])
    with pytest.raises(ValueError):
        aggregate_cv([report(0)], k=10)


# --- comparison -----------------------------------------------------------

def summary(model, tp, fp, digest="abc"):
    return aggregate_cv([report(0, tp, fp, 100 - fp, 100 - tp, model)], plan_digest=digest)


def test_single_model_top_ranked():
    table = comparison_report([summary("cnn", 97, 3)])
    assert len(table.rows) == 1 and table.rows[0]["f1_rank"] == 1


def test_ranking_and_pass_through():
    a, b = summary("worse", 90, 10), summary("better", 97, 3)
    table = comparison_report([a, b], notes={"BayesNet": "out of scope"})
    ranks = {r["model"]: r.get("f1_rank") for r in table.rows}
    assert ranks["better"] == 1 and ranks["worse"] == 2
    for row, s in zip(table.rows, (a, b)):
        assert (row["accuracy"], row["precision"], row["recall"], row["f1"]) == (s.accuracy, s.precision,
                                                                                 s.recall, s.f1)
    text = table.render()
    assert "out of scope" in text and "abc" in text


def test_mismatched_plans_rejected():
    with pytest.raises(ValueError, match="fold plans"):
        comparison_report([summary("a", 90, 10, "x"), summary("b", 90, 10, "y")])


# --- records --------------------------------------------------------------

def test_records_csv_fields_and_full_precision():
    s = aggregate_cv([report(0, 1, 2, 3, 4, seed=42), report(1, 5, 6, 7, 8, seed=42)])
    text = records_csv([r.record() for r in s.folds] + [s.record()])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == RECORD_FIELDS
    assert rows[-1]["fold"] == "mean"
    assert float(rows[0]["precision"]) == 1 / 3
    assert f"precision={s.precision:.3f}" in s.line()
