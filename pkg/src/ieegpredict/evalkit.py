"""Sensitivity, specificity and ROC/AUC with per-patient averaging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class SingleClassError(ValueError):
    """Raised when a metric needs both classes but only one is present."""


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else float("nan")


def _scores_labels(probs, labels=None):
    if labels is None:
        pairs = list(probs)
        probs = [p for p, _ in pairs]
        labels = [y for _, y in pairs]
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    if probs.shape != labels.shape:
        raise ValueError("probabilities and labels differ in length")
    if probs.size == 0:
        raise ValueError("no predictions given")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    return probs, labels


def confusion(probs, labels=None, threshold: float = 0.5) -> Confusion:
    """Counts with the rule: predicted positive iff prob >= threshold.

    Accepts either parallel ``probs``/``labels`` sequences or a single
    sequence of ``(prob, label)`` pairs.
    """
    p, y = _scores_labels(probs, labels)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    pred = p >= threshold
    pos = y == 1
    return Confusion(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
    )


class RocResult(NamedTuple):
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(probs, labels=None) -> RocResult:
    """ROC over every distinct score, AUC by the trapezoidal rule.

    Tied scores move the curve diagonally, which credits positive/negative
    ties with 1/2, so the area equals the Mann-Whitney statistic.
    """
    s, y = _scores_labels(probs, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last_of_run]]
    # trapezoids in integer counts, normalized once, so exact cases stay exact
    tp_c = np.r_[0, tps]
    fp_c = np.r_[0, fps]
    area2 = int(np.sum(np.diff(fp_c) * (tp_c[1:] + tp_c[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    return RocResult(auc, fpr, tpr, thresholds)


@dataclass
class PatientMetrics:
    patient_id: str
    sensitivity: float
    specificity: float
    auc: float
    roc: RocResult
    confusion: Confusion
    n_clips: int

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "auc": self.auc,
            "n_clips": self.n_clips,
            "confusion": self.confusion._asdict(),
            "roc_points": [list(p) for p in self.roc.points()],
        }


@dataclass
class EvalReport:
    per_patient: list[PatientMetrics]
    threshold: float
    average_sensitivity: float = field(init=False)
    average_auc: float = field(init=False)
    average_specificity: float = field(init=False)

    def __post_init__(self):
        # unweighted means across patients
        self.average_sensitivity = average([m.sensitivity for m in self.per_patient])
        self.average_specificity = average([m.specificity for m in self.per_patient])
        self.average_auc = average([m.auc for m in self.per_patient])

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "average_sensitivity": self.average_sensitivity,
            "average_specificity": self.average_specificity,
            "average_auc": self.average_auc,
            "per_patient": [m.to_json() for m in self.per_patient],
        }


def average(values) -> float:
    values = list(values)
    if not values:
        raise ValueError("nothing to average")
    return float(sum(values) / len(values))


def evaluate(per_patient: dict, threshold: float = 0.5) -> EvalReport:
    """``per_patient`` maps patient id -> sequence of (prob, label) pairs."""
    if not per_patient:
        raise ValueError("evaluate needs at least one patient")
    metrics = []
    for pid, preds in per_patient.items():
        probs, labels = _scores_labels(preds)
        conf = confusion(probs, labels, threshold)
        roc = roc_auc(probs, labels)
        metrics.append(
            PatientMetrics(pid, conf.sensitivity, conf.specificity, roc.auc, roc, conf, int(probs.size))
        )
    return EvalReport(metrics, threshold)
