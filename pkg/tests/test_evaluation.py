import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volclf.errors import ConfigurationError, DataError
from volclf.evaluation.metrics import (
    ConfusionMatrix,
    aggregate_cv,
    auc,
    balanced_accuracy,
    confusion,
    evaluate_predictions,
    metrics,
    round_half_up,
)
from volclf.evaluation.voting import UnitPrediction, compute_weights, soft_vote, vote_subjects


def brute_force_vote(probs, weights):
    """Score every class separately and keep the first best one."""
    n_class = len(probs[0])
    best_class, best_score = None, None
    for i in range(n_class):
        score = 0.0
        for p, w in zip(probs, weights):
            score += w * p[i]
        if best_score is None or score > best_score:
            best_class, best_score = i, score
    return best_class


def trapezoid_auc(scores, labels):
    """Area under the ROC polyline traced by sweeping the threshold over distinct scores."""
    scores, labels = np.asarray(scores, float), np.asarray(labels, bool)
    pts = [(0.0, 0.0)]
    for t in sorted(set(scores), reverse=True):
        pred = scores >= t
        pts.append(((pred & ~labels).sum() / (~labels).sum(), (pred & labels).sum() / labels.sum()))
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


# voting -----------------------------------------------------------------------


def test_soft_vote_examples():
    y, fused = soft_vote({0: [0.2, 0.8], 1: [0.9, 0.1]}, {0: 0.7, 1: 0.3})
    np.testing.assert_allclose(fused, [0.41, 0.59])
    assert y == 1
    assert soft_vote({"a": [0.3, 0.7]}, {"a": 0.01})[0] == 1
    assert soft_vote({"a": [0.5, 0.5]}, {"a": 1.0})[0] == 0  # ties go to the lower class
    with pytest.raises(ConfigurationError):
        soft_vote({"a": [0.5, 0.5]}, {"b": 1.0})
    with pytest.raises(DataError):
        soft_vote({}, {})


def test_soft_vote_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m, c = rng.integers(1, 6), rng.integers(2, 4)
        # quarter-step probabilities and eighth-step weights keep sums exact, so ties really occur
        raw = rng.integers(0, 5, (m, c)).astype(float)
        raw[:, 0] += raw.sum(axis=1) == 0
        probs = raw / raw.sum(axis=1, keepdims=True)
        weights = rng.integers(0, 9, m) / 8
        got, _ = soft_vote(dict(enumerate(probs.tolist())), dict(enumerate(weights.tolist())))
        assert got == brute_force_vote(probs.tolist(), weights.tolist())


@given(
    st.lists(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=2), min_size=1, max_size=8),
    st.floats(0.01, 1.0),
    st.sampled_from([0.5, 2.0, 4.0, 1024.0]),
)
def test_soft_vote_scale_invariance(raw, w, scale):
    # power-of-two scales are exact in binary floating point
    probs = {j: [a / (a + b), b / (a + b)] for j, (a, b) in enumerate(raw)}
    weights = {j: w * (j + 1) for j in probs}
    scaled = {j: v * scale for j, v in weights.items()}
    assert soft_vote(probs, weights)[0] == soft_vote(probs, scaled)[0]


def test_weight_examples():
    assert list(compute_weights([0.8, 0.8]).weights.values()) == [0.5, 0.5]
    w = compute_weights([0.9, 0.6, 0.75], threshold=0.7)
    np.testing.assert_allclose(list(w.weights.values()), [0.9 / 1.65, 0.0, 0.75 / 1.65])
    assert round(w[0], 3) == 0.545 and round(w[2], 3) == 0.455
    with pytest.warns(RuntimeWarning):
        fb = compute_weights([0.65, 0.65, 0.65], threshold=0.7)
    assert fb.fallback
    np.testing.assert_allclose(list(fb.weights.values()), [1 / 3] * 3)
    with pytest.raises(ConfigurationError):
        compute_weights([])
    with pytest.raises(ConfigurationError):
        compute_weights([1.2])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(bas, t1, t2):
    lo, hi = sorted((t1, t2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a, b = compute_weights(bas, lo), compute_weights(bas, hi)
    if a.fallback or b.fallback:
        return
    contributing = lambda w: {u for u, v in w.weights.items() if v > 0}
    assert contributing(b) <= contributing(a)
    assert math.isclose(sum(b.weights.values()), 1.0) or not any(bas)
    assert all(v >= 0 for v in b.weights.values())


def test_vote_subjects_groups_by_session():
    preds = [
        UnitPrediction("s1", "M00", 0, (0.2, 0.8), 1),
        UnitPrediction("s1", "M00", 1, (0.9, 0.1), 1),
        UnitPrediction("s2", "M00", 0, (0.6, 0.4), 0),
        UnitPrediction("s2", "M00", 1, (0.7, 0.3), 0),
    ]
    out = vote_subjects(preds, {0: 0.7, 1: 0.3})
    assert out[("s1", "M00")][0] == 1 and out[("s2", "M00")][0] == 0
    with pytest.raises(DataError):
        UnitPrediction("s", "M00", 0, (0.5, 0.6), 0)
    with pytest.raises(DataError):
        vote_subjects(preds + [UnitPrediction("s1", "M00", 2, (0.5, 0.5), 0)], {0: 0.3, 1: 0.3, 2: 0.4})


# metrics ----------------------------------------------------------------------


def test_confusion_arithmetic_example():
    r = metrics(ConfusionMatrix(tp=8, fp=5, tn=5, fn=2))
    assert (r.sensitivity, r.specificity, r.ba, r.accuracy) == pytest.approx((0.8, 0.5, 0.65, 0.65))
    y = [1] * 10 + [0] * 10
    p = [1] * 8 + [0] * 2 + [0] * 5 + [1] * 5
    assert confusion(y, p) == ConfusionMatrix(8, 5, 5, 2)
    perfect = evaluate_predictions(y, y, scores=y)
    assert (perfect.ba, perfect.accuracy, perfect.sensitivity, perfect.specificity, perfect.auc) == (1, 1, 1, 1, 1)


def test_imbalance_flag():
    y = [0] * 10 + [1] * 4
    assert evaluate_predictions(y, y).imbalanced
    assert not evaluate_predictions([0] * 10 + [1] * 5, [0] * 10 + [1] * 5).imbalanced


def test_metric_errors():
    with pytest.raises(DataError):
        confusion([], [])
    with pytest.raises(DataError):
        confusion([0, 1], [0])
    with pytest.raises(DataError):
        confusion([0, 1, 2], [0, 1, 2])
    with pytest.raises(DataError):
        auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_ba_identity(pairs):
    y, p = zip(*pairs)
    r = evaluate_predictions(y, p)
    sens = sum(a == b == 1 for a, b in pairs) / max(sum(y), 1) if sum(y) else math.nan
    n_neg = len(y) - sum(y)
    spec = sum(a == b == 0 for a, b in pairs) / n_neg if n_neg else math.nan
    if math.isnan(sens) or math.isnan(spec):
        assert math.isnan(r.ba)
    else:
        assert r.ba == pytest.approx((sens + spec) / 2)
        assert 0 <= r.ba <= 1 and balanced_accuracy(y, p) == r.ba


# AUC --------------------------------------------------------------------------


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    rng = np.random.default_rng(0)
    s, y = rng.random(20000), rng.integers(0, 2, 20000)
    assert abs(auc(s, y) - 0.5) < 0.02


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_properties(pairs):
    scores = np.array([p[0] / 6 for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.all() or not labels.any():
        return
    a = auc(scores, labels)
    assert 0 <= a <= 1
    assert a == pytest.approx(trapezoid_auc(scores, labels))
    assert a + auc(-scores, labels) == pytest.approx(1.0)
    assert a == pytest.approx(auc(np.exp(3 * scores) - 7, labels))


# aggregation ------------------------------------------------------------------


def test_aggregate_table_row():
    folds = [0.88, 0.88, 0.84, 0.85, 0.78]
    s = aggregate_cv(folds)
    assert s.mean == pytest.approx(0.846)
    assert s.format() == "0.85 ± 0.04 [0.88, 0.88, 0.84, 0.85, 0.78]"
    assert s.sd == pytest.approx(np.std(folds, ddof=1))


def test_aggregate_boundaries():
    one = aggregate_cv([0.7])
    assert one.sd == 0.0 and not one.sd_defined
    same = aggregate_cv([0.6, 0.6, 0.6])
    assert same.sd == 0.0 and same.sd_defined
    with pytest.raises(DataError):
        aggregate_cv([])
    assert round_half_up(0.125) == "0.13" and round_half_up(0.845) == "0.85"


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_aggregate_mean_matches_folds(values):
    reports = [evaluate_predictions([0, 1], [0, 1]) for _ in values]
    assert aggregate_cv(reports).mean == 1.0
    assert aggregate_cv(values).mean == pytest.approx(sum(values) / len(values))
