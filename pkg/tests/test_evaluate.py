import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from camtamper.evaluate import (REPORT_SCHEMA, ConfusionReport, build_report, confusion, deviation_srmse,
                                detection_scores, optimal_threshold, roc, validate_report, welch_ttest,
                                write_roc_csv, youden_index)
from camtamper.features import FEATURE_IDS


def pairwise_auc(scores, labels):
    """Brute-force Mann-Whitney probability, ties counted half."""
    s = np.asarray(scores, float)
    y = np.asarray(labels, bool)
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


# -- ROC --------------------------------------------------------------------------------------


def test_roc_hand_example():
    curve = roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert curve.auc == pytest.approx(0.75, rel=1e-12)
    np.testing.assert_array_equal(curve.fpr, [0, 0, 0.5, 0.5, 1])
    np.testing.assert_array_equal(curve.tpr, [0, 0.5, 0.5, 1, 1])
    assert math.isinf(curve.thresholds[0])


def test_roc_ties_grouped():
    curve = roc([1, 1, 1, 0, 0, 2], [1, 0, 1, 0, 1, 1])
    # thresholds: inf, 2, 1, 0
    assert len(curve.thresholds) == 4
    assert curve.auc == pytest.approx(pairwise_auc([1, 1, 1, 0, 0, 2], [1, 0, 1, 0, 1, 1]), rel=1e-12)


def test_roc_perfect_and_random(rng):
    assert roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    s = rng.standard_normal(10000)
    y = rng.integers(0, 2, 10000)
    assert 0.48 <= roc(s, y).auc <= 0.52


def test_roc_requires_two_classes():
    with pytest.raises(ValueError):
        roc([1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        roc([1.0, 2.0], [1, 0, 1])


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_equals_pairwise_probability(data):
    s = [d[0] for d in data]
    y = [d[1] for d in data]
    assume(any(y) and not all(y))
    curve = roc(s, y)
    assert curve.auc == pytest.approx(pairwise_auc(s, y), abs=1e-12)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert (curve.fpr[0], curve.tpr[0], curve.fpr[-1], curve.tpr[-1]) == (0, 0, 1, 1)
    assert 0 <= curve.auc <= 1


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(-100, 100), st.booleans()), min_size=2, max_size=40),
       st.sampled_from(["exp", "cube", "affine"]))
def test_auc_invariant_under_increasing_transform(data, kind):
    s = np.array([d[0] for d in data])
    y = [d[1] for d in data]
    assume(any(y) and not all(y))
    f = {"exp": lambda v: np.exp(v / 50), "cube": lambda v: v**3, "affine": lambda v: 3 * v + 7}[kind]
    t = f(s)
    # exact ties must be preserved by the transform for the invariance to hold
    assume(len(np.unique(t)) == len(np.unique(s)))
    assert roc(t, y).auc == pytest.approx(roc(s, y).auc, abs=1e-12)


# -- thresholds ------------------------------------------------------------------------------------


def test_optimal_threshold_separator():
    s = [0.1, 0.2, 0.3, 0.8, 0.9]
    y = [0, 0, 0, 1, 1]
    curve = roc(s, y)
    thr = optimal_threshold(curve)
    assert 0.3 < thr <= 0.8
    assert youden_index(curve) == 1.0


def test_optimal_threshold_single_score():
    curve = roc([2.0, 2.0, 2.0], [0, 1, 0])
    assert optimal_threshold(curve) == 2.0


def test_optimal_threshold_random_near_zero(rng):
    s = rng.standard_normal(5000)
    y = rng.integers(0, 2, 5000)
    assert youden_index(roc(s, y)) < 0.05


def test_optimal_threshold_ties_lower():
    # J = 0.5 at threshold 4 and at threshold 2
    s = [4, 3, 2, 1]
    y = [1, 0, 1, 0]
    curve = roc(s, y)
    j = curve.tpr - curve.fpr
    assert j.max() == 0.5
    assert optimal_threshold(curve) == 2.0


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-10, 10), st.booleans()), min_size=2, max_size=30))
def test_youden_objective_nonnegative(data):
    s = [d[0] for d in data]
    y = [d[1] for d in data]
    assume(any(y) and not all(y))
    curve = roc(s, y)
    thr = optimal_threshold(curve)
    c = confusion(s, y, thr)
    j = c.tp / (c.tp + c.fn) - c.fp / (c.fp + c.tn)
    assert j == pytest.approx(youden_index(curve), abs=1e-12)
    assert youden_index(curve) >= 0


# -- confusion -------------------------------------------------------------------------------------


def test_confusion_hand_example():
    scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.9, 0.05, 0.15, 0.8, 0.95]
    labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1]
    c = confusion(scores, labels, 0.6)
    assert (c.tn, c.fp, c.fn, c.tp) == (5, 1, 2, 2)
    assert c.accuracy == pytest.approx(0.7, rel=1e-12)
    assert c.f1 == pytest.approx(4 / 7, rel=1e-12)


def test_confusion_all_correct_and_dash():
    c = confusion([0, 0, 1, 1], [0, 0, 1, 1], 0.5)
    assert c.accuracy == 1 and c.f1 == 1
    d = confusion([0, 0, 0, 0], [0, 0, 1, 1], 0.5)
    assert d.tp == 0 and d.f1 is None
    assert d.to_dict()["f1"] is None
    assert ConfusionReport(3, 0, 0, 0).f1 is None


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.booleans()), min_size=1, max_size=30))
def test_confusion_extremes(data):
    s = [d[0] for d in data]
    y = [d[1] for d in data]
    n_pos = sum(y)
    lo = confusion(s, y, min(s) - 1)
    assert lo.fp == len(y) - n_pos and lo.fn == 0 and lo.tp == n_pos
    hi = confusion(s, y, max(s) + 1)
    assert hi.tp == 0 and hi.fp == 0 and hi.tn == len(y) - n_pos
    c = confusion(s, y, float(np.median(s)))
    assert c.total == len(y)
    assert c.accuracy == pytest.approx((c.tp + c.tn) / len(y))


# -- deviation / t-test -----------------------------------------------------------------------------


def test_deviation_srmse_examples():
    x = np.array([1.0, 4.0, 2.0, 8.0, 5.0])
    assert deviation_srmse(x, x) == 0
    assert deviation_srmse(x, x + 7.0) == pytest.approx(1.0, rel=1e-12)
    assert deviation_srmse([0.0, 10.0], [5.0, 5.0]) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError):
        deviation_srmse(x, x[:3])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_deviation_self_zero(x):
    assume(max(x) > min(x))
    assert deviation_srmse(x, x) == 0


def test_welch_hand_example():
    a = [1.0, 2.0, 3.0, 4.0, 5.0]
    b = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]
    # t = (3 - 7) / sqrt(2.5/5 + 14/6), df by Welch-Satterthwaite
    va, vb = 2.5 / 5, 14 / 6
    t = -4 / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / 4 + vb**2 / 5)
    expect = 2 * stats.t.cdf(t, df)
    assert welch_ttest(a, b) == pytest.approx(expect, rel=1e-9)
    assert welch_ttest(a, b) == pytest.approx(stats.ttest_ind(a, b, equal_var=False).pvalue, rel=1e-9)


def test_welch_examples(rng):
    a = rng.standard_normal(24)
    assert welch_ttest(a, a.copy()) == 1.0
    assert welch_ttest(rng.normal(0, 1, 24), rng.normal(5, 1, 24)) < 1e-6
    with pytest.raises(ValueError):
        welch_ttest([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(ValueError):
        welch_ttest([1.0], [2.0, 3.0])


def test_welch_null_uniform():
    ps = []
    for seed in range(200):
        r = np.random.default_rng(seed)
        ps.append(welch_ttest(r.standard_normal(24), r.standard_normal(24)))
    assert stats.kstest(ps, "uniform").pvalue > 0.01


# -- scores / report ---------------------------------------------------------------------------------


def test_detection_scores():
    r = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
    sc = detection_scores(r, [True, True, True, False, False])
    # median 2, MAD 1 -> spread 1.4826
    np.testing.assert_allclose(sc, np.abs(r - 2) / 1.4826)
    flat = detection_scores([5.0, 5.0, 5.0, 9.0], [True, True, True, False])
    np.testing.assert_array_equal(flat, [0, 0, 0, 4])
    with pytest.raises(ValueError):
        detection_scores([1.0], [False])


def toy_report_inputs(n=600, seed=0):
    rng = np.random.default_rng(seed)
    labels = ["normal"] * n
    for start, kind in ((350, "covered"), (450, "defocussed"), (540, "moved")):
        labels[start : start + 40] = [kind] * 40
    normal = {f: rng.standard_normal(n) for f in FEATURE_IDS}
    tampered = {f: normal[f].copy() for f in FEATURE_IDS}
    lab = np.array(labels)
    tampered["b2"][lab == "covered"] += 8
    tampered["e2"][lab == "defocussed"] -= 8
    fits = [{"feature": f, "segment": k, "srmse": float(rng.uniform(0.1, 0.3))} for f in FEATURE_IDS for k in range(3)]
    return normal, tampered, labels, fits


def test_build_report_schema_and_content(tmp_path):
    normal, tampered, labels, fits = toy_report_inputs()
    curves = {}
    rep = build_report(normal, tampered, labels, fits=fits, roc_curves=curves)
    validate_report(rep)
    json.dumps(rep)
    assert rep["features"]["b2"]["classes"]["covered"]["auc"] == 1.0
    assert rep["features"]["e2"]["classes"]["defocussed"]["auc"] == 1.0
    uni = rep["features"]["b1"]["classes"]["unified"]
    assert uni["n_pos"] == 120 and uni["n_pos"] + uni["n_neg"] == 600
    for kind in ("covered", "defocussed", "moved"):
        assert rep["features"]["b1"]["classes"][kind]["n_pos"] == 40
    m = np.array(rep["ttest"]["pvalues"], dtype=float)
    assert m.shape == (10, 10)
    np.testing.assert_allclose(m, m.T)
    assert np.all((m >= 0) & (m <= 1))
    np.testing.assert_array_equal(np.diag(m), 1.0)
    write_roc_csv(curves[("b2", "covered")], tmp_path / "roc.csv")
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr\ninf,0.0,0.0\n")


def test_build_report_errors():
    normal, tampered, labels, fits = toy_report_inputs()
    del tampered["k2"]
    with pytest.raises(KeyError):
        build_report(normal, tampered, labels)
    normal, tampered, labels, fits = toy_report_inputs()
    with pytest.raises(ValueError):
        build_report(normal, tampered, labels[:-1])


def test_schema_rejects_broken_report():
    normal, tampered, labels, fits = toy_report_inputs()
    rep = build_report(normal, tampered, labels, fits=fits)
    rep["features"]["b1"]["classes"]["covered"]["auc"] = 1.5
    with pytest.raises(Exception):
        validate_report(rep)
    assert REPORT_SCHEMA["type"] == "object"


def test_hourly_segmentation_arithmetic():
    from camtamper.cli import _segments
    segs = _segments(24 * 3600 * 3, 10800)
    assert len(segs) == 24
    assert all(b - a == 10800 for a, b in segs)
