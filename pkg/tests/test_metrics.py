import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtrace.errors import InvalidInput, UndefinedMetric
from fedtrace.metrics import auprc, average_precision, pr_curve, summarize_runs


def brute_force_curve(scores, labels):
    """O(n^2) re-scan at every distinct threshold, descending."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = sum(labels)
    points = []
    for t in thresholds:
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        points.append((t, tp / (tp + fp), tp / n_pos))
    return points


def brute_force_ap(scores, labels):
    ap, prev_recall = 0.0, 0.0
    for _, precision, recall in brute_force_curve(scores, labels):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(1234)
    for _ in range(50):
        n = 200
        # quantized scores so tie groups actually occur
        scores = np.round(rng.normal(size=n), 1)
        labels = rng.random(n) < 0.3
        if not labels.any():
            labels[0] = True
        got = average_precision(scores, labels)
        want = brute_force_ap(list(scores), list(labels))
        assert got == pytest.approx(want, abs=1e-12)


def test_curve_points_match_brute_force():
    rng = np.random.default_rng(7)
    scores = np.round(rng.random(60), 1)
    labels = rng.random(60) < 0.4
    labels[0] = True
    curve = pr_curve(scores, labels)
    want = brute_force_curve(list(scores), list(labels))
    assert len(curve.thresholds) == len(want)
    for i, (t, p, r) in enumerate(want):
        assert curve.thresholds[i] == pytest.approx(t, abs=0)
        assert curve.precision[i] == pytest.approx(p, abs=1e-12)
        assert curve.recall[i] == pytest.approx(r, abs=1e-12)


def test_perfect_separation_gives_one():
    scores = np.array([0.9, 0.8, 0.7, 0.2, 0.1])
    labels = np.array([True, True, True, False, False])
    assert average_precision(scores, labels) == pytest.approx(1.0, abs=0)


def test_constant_scores_give_prevalence():
    scores = np.zeros(40)
    labels = np.zeros(40, dtype=bool)
    labels[:6] = True
    curve = pr_curve(scores, labels)
    assert len(curve.thresholds) == 1
    assert average_precision(scores, labels) == pytest.approx(6 / 40, abs=1e-15)


def test_recall_monotone_and_final():
    rng = np.random.default_rng(99)
    scores = rng.normal(size=300)
    labels = rng.random(300) < 0.1
    labels[-1] = True
    curve = pr_curve(scores, labels)
    assert np.all(np.diff(curve.recall) >= 0)
    assert curve.recall[-1] == pytest.approx(1.0, abs=0)
    assert np.all(np.diff(curve.thresholds) < 0)


def test_no_positives_is_undefined():
    with pytest.raises(UndefinedMetric):
        pr_curve(np.arange(5.0), np.zeros(5, dtype=bool))


def test_bad_inputs_rejected():
    with pytest.raises(InvalidInput):
        pr_curve(np.array([]), np.array([], dtype=bool))
    with pytest.raises(InvalidInput):
        pr_curve(np.array([np.nan, 1.0]), np.array([True, False]))
    with pytest.raises(InvalidInput):
        pr_curve(np.arange(3.0), np.array([True, False]))


@settings(max_examples=60, deadline=None)
@given(
    data=st.lists(
        st.tuples(st.integers(min_value=-50, max_value=50), st.booleans()),
        min_size=2, max_size=80,
    ),
    scale=st.floats(min_value=0.25, max_value=8.0),
    shift=st.floats(min_value=-5.0, max_value=5.0),
)
def test_invariant_under_increasing_affine_transform(data, scale, shift):
    scores = np.array([float(s) for s, _ in data])
    labels = np.array([y for _, y in data])
    if not labels.any():
        labels[0] = True
    base = average_precision(scores, labels)
    moved = average_precision(scores * scale + shift, labels)
    assert moved == pytest.approx(base, abs=1e-9)


def test_summarize_runs_groups_and_orders():
    records = [
        {"feature_set": "All", "participants": 100, "epsilon": 5.0, "seed": s,
         "auprc": v}
        for s, v in enumerate([0.9, 0.92, 0.88])
    ] + [
        {"feature_set": "All", "participants": 100, "epsilon": math.inf, "seed": 0,
         "auprc": 0.95},
    ]
    rows = summarize_runs(records)
    assert len(rows) == 2
    assert rows[0]["epsilon"] == 5.0 and rows[0]["seeds"] == 3
    assert rows[0]["auprc_mean"] == pytest.approx(0.9, abs=1e-12)
    assert rows[0]["auprc_std"] == pytest.approx(np.std([0.9, 0.92, 0.88], ddof=1))
    assert rows[1]["epsilon"] == math.inf and rows[1]["auprc_std"] == 0.0
    with pytest.raises(InvalidInput):
        summarize_runs([{"feature_set": "All"}])
