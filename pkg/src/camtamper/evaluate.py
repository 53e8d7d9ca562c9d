"""Detector scoring: robustness (sRMSE), ROC / AUC, Youden threshold, confusion
matrices and Welch t-tests between features."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .features import FEATURE_IDS
from .synth import KINDS
from .tsa import srmse

CLASSES = KINDS + ("unified",)
MAD_SCALE = 1.4826


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def rows(self):
        return zip(self.thresholds, self.fpr, self.tpr)


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype != bool:
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be binary")
        y = y.astype(bool)
    return y


def roc(scores, labels) -> RocCurve:
    """ROC over every distinct score; a sample is called positive when ``score >= threshold``.

    The curve starts at ``(0, 0)`` with threshold ``+inf`` and ends at ``(1, 1)``.
    Tied scores move together. AUC is the trapezoid area.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    tps = np.cumsum(y_sorted)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s_sorted[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def youden_index(curve: RocCurve) -> float:
    return float(np.max(curve.tpr - curve.fpr))


def optimal_threshold(curve: RocCurve) -> float:
    """Threshold maximising ``tpr - fpr``; ties go to the lower threshold."""
    j = curve.tpr - curve.fpr
    best = np.flatnonzero(j >= j.max() - 1e-12)
    return float(curve.thresholds[best].min())


@dataclass
class ConfusionReport:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @property
    def f1(self) -> float | None:
        """``2tp / (2tp + fp + fn)``; None (rendered as a dash) when there are no true positives."""
        if self.tp == 0:
            return None
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)

    def to_dict(self) -> dict:
        return {"tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp,
                "accuracy": self.accuracy, "f1": self.f1}


def confusion(scores, labels, threshold: float) -> ConfusionReport:
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    return ConfusionReport(tn, fp, fn, tp)


def deviation_srmse(normal_residuals, tampered_residuals) -> float:
    """sRMSE of the tampered residuals against the paired normal ones (normal range normalises)."""
    a = np.asarray(normal_residuals, dtype=np.float64)
    b = np.asarray(tampered_residuals, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired residual series must have equal length")
    return srmse(a, b)


def welch_ttest(a, b) -> float:
    """Two-sided p-value of Welch's unequal-variance t-test."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    if va == 0 and vb == 0:
        raise ValueError("both samples have zero variance")
    diff = a.mean() - b.mean()
    if diff == 0:
        return 1.0
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def detection_scores(residuals, reference_mask) -> np.ndarray:
    """``|r - median| / (1.4826 MAD)`` with median and MAD taken over ``reference_mask``.

    Falls back to the standard deviation, then to 1, when the spread is zero.
    """
    r = np.asarray(residuals, dtype=np.float64)
    ref = r[np.asarray(reference_mask, dtype=bool)]
    if len(ref) == 0:
        raise ValueError("empty reference window for standardisation")
    med = np.median(ref)
    spread = MAD_SCALE * np.median(np.abs(ref - med))
    if not spread > 0:
        spread = ref.std()
    if not spread > 0:
        spread = 1.0
    return np.abs(r - med) / spread


def write_roc_csv(curve: RocCurve, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for thr, f, t in curve.rows():
            w.writerow([repr(float(thr)), repr(float(f)), repr(float(t))])


# -- report --------------------------------------------------------------------------

UHCTD_REFERENCE = {
    "note": "published UHCTD values, for orientation only; not reproducible on toy data",
    "auc": {"b2/covered": 0.67, "b4/covered": 0.62, "e4/covered": 0.62, "e2/defocussed": 0.62},
    "predictability_srmse": {"b3": 0.122, "e2": 1.718},
    "deviation_srmse": {"k1/covered": 4.4555},
}


def _class_masks(labels: Sequence[str]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per class: (rows included, positive flag among included rows)."""
    lab = np.asarray(labels)
    normal = lab == "normal"
    out = {}
    for kind in KINDS:
        inc = normal | (lab == kind)
        out[kind] = (inc, (lab == kind)[inc])
    out["unified"] = (np.ones(len(lab), dtype=bool), ~normal)
    return out


def _pvalue_matrix(samples: Mapping[str, np.ndarray], features: Sequence[str]) -> list[list[float | None]]:
    m: list[list[float | None]] = []
    for fa in features:
        row: list[float | None] = []
        for fb in features:
            if fa == fb:
                row.append(1.0)
                continue
            a = np.asarray(samples.get(fa, []), dtype=np.float64)
            b = np.asarray(samples.get(fb, []), dtype=np.float64)
            a = a[np.isfinite(a)]
            b = b[np.isfinite(b)]
            try:
                row.append(welch_ttest(a, b))
            except ValueError:
                row.append(None)
        m.append(row)
    return m


def build_report(normal: Mapping[str, np.ndarray], tampered: Mapping[str, np.ndarray],
                 labels: Sequence[str], valid: Mapping[str, np.ndarray] | None = None,
                 fits: Sequence[Mapping] | None = None, features: Sequence[str] = FEATURE_IDS,
                 warmup_frames: int = 300, roc_curves: dict | None = None) -> dict:
    """Assemble the evaluation document.

    ``normal`` and ``tampered`` map feature ids to residual arrays aligned frame by
    frame with ``labels``. ``valid`` masks warm-up rows per feature. ``fits`` holds one
    record per (feature, segment) with a ``srmse`` entry. If ``roc_curves`` is a dict
    it is filled with ``(feature, class) -> RocCurve``.
    """
    n = len(labels)
    labels_arr = np.asarray(labels)
    for f in features:
        if f not in normal or f not in tampered:
            raise KeyError(f"missing residual column {f}")
        if len(normal[f]) != n or len(tampered[f]) != n:
            raise ValueError(f"residuals for {f} are not aligned with the annotations")
    classes = _class_masks(labels)
    per_segment: dict[str, list[float]] = {f: [] for f in features}
    for rec in fits or ():
        if rec.get("feature") in per_segment and rec.get("srmse") is not None:
            per_segment[rec["feature"]].append(float(rec["srmse"]))

    out_features = {}
    for f in features:
        ok = np.ones(n, dtype=bool) if valid is None else np.asarray(valid[f], dtype=bool)
        first = int(np.argmax(ok)) if ok.any() else n
        warm = np.zeros(n, dtype=bool)
        warm[first : first + warmup_frames] = True
        warm &= ok & (labels_arr == "normal")
        if not warm.any():
            warm = ok & (labels_arr == "normal")
        scores = detection_scores(tampered[f], warm)

        seg = [v for v in per_segment[f] if math.isfinite(v)]
        entry = {
            "predictability_srmse": float(np.mean(seg)) if seg else None,
            "segments": len(per_segment[f]),
            "classes": {},
        }
        for cls, (inc, pos) in classes.items():
            use = inc & ok
            pos_use = pos[use[inc]]
            cls_entry: dict = {"n_pos": int(pos_use.sum()), "n_neg": int((~pos_use).sum())}
            tamper_rows = use & (labels_arr != "normal")
            if tamper_rows.any():
                dev = deviation_srmse(normal[f][tamper_rows], tampered[f][tamper_rows])
                cls_entry["deviation_srmse"] = dev if math.isfinite(dev) else None
            else:
                cls_entry["deviation_srmse"] = None
            if cls_entry["n_pos"] and cls_entry["n_neg"]:
                s_use = scores[use]
                curve = roc(s_use, pos_use)
                thr = optimal_threshold(curve)
                cls_entry.update(
                    auc=curve.auc,
                    optimal_threshold=thr,
                    youden=youden_index(curve),
                    confusion=confusion(s_use, pos_use, thr).to_dict(),
                )
                if roc_curves is not None:
                    roc_curves[(f, cls)] = curve
            else:
                cls_entry.update(auc=None, optimal_threshold=None, youden=None, confusion=None)
            entry["classes"][cls] = cls_entry
        out_features[f] = entry

    return {
        "meta": {
            "score": "abs_robust_z",
            "score_description": "|r - median| / (1.4826 * MAD) over the first warm-up frames",
            "warmup_frames": int(warmup_frames),
            "n_frames": n,
            "features": list(features),
            "classes": list(CLASSES),
            "uhctd_reference": UHCTD_REFERENCE,
        },
        "features": out_features,
        "ttest": {"features": list(features), "pvalues": _pvalue_matrix(per_segment, features)},
    }


_NUM_OR_NULL = {"type": ["number", "null"]}
_CONFUSION = {
    "type": ["object", "null"],
    "required": ["tn", "fp", "fn", "tp", "accuracy", "f1"],
    "properties": {
        "tn": {"type": "integer", "minimum": 0},
        "fp": {"type": "integer", "minimum": 0},
        "fn": {"type": "integer", "minimum": 0},
        "tp": {"type": "integer", "minimum": 0},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "f1": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
}
_CLASS_ENTRY = {
    "type": "object",
    "required": ["n_pos", "n_neg", "deviation_srmse", "auc", "optimal_threshold", "youden", "confusion"],
    "properties": {
        "n_pos": {"type": "integer", "minimum": 0},
        "n_neg": {"type": "integer", "minimum": 0},
        "deviation_srmse": _NUM_OR_NULL,
        "auc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "optimal_threshold": _NUM_OR_NULL,
        "youden": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "confusion": _CONFUSION,
    },
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["meta", "features", "ttest"],
    "properties": {
        "meta": {"type": "object", "required": ["score", "warmup_frames", "features", "classes"]},
        "features": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["predictability_srmse", "segments", "classes"],
                "properties": {
                    "predictability_srmse": _NUM_OR_NULL,
                    "segments": {"type": "integer", "minimum": 0},
                    "classes": {
                        "type": "object",
                        "required": list(CLASSES),
                        "additionalProperties": _CLASS_ENTRY,
                    },
                },
            },
        },
        "ttest": {
            "type": "object",
            "required": ["features", "pvalues"],
            "properties": {
                "pvalues": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0, "maximum": 1}},
                }
            },
        },
    },
}


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)
