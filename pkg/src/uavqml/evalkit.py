"""Binary classification metrics with attack (+1) as the positive class."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

TABLE_COLUMNS = (
    "model", "qubits", "layers", "class_params", "quant_params",
    "accuracy", "f1", "specificity", "sensitivity", "mcc", "roc_auc", "macro_f1",
)


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    specificity: float
    sensitivity: float
    mcc: float
    roc_auc: float | None
    macro_f1: float
    n_samples: int
    n_positive: int
    footprint: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table_row(self, model: str) -> dict:
        fp = self.footprint
        return {
            "model": model,
            "qubits": fp.get("qubits", "-"),
            "layers": fp.get("layers", "-"),
            "class_params": fp.get("classical_params", "-"),
            "quant_params": fp.get("quantum_params", "-"),
            "accuracy": self.accuracy,
            "f1": self.f1,
            "specificity": self.specificity,
            "sensitivity": self.sensitivity,
            "mcc": self.mcc,
            "roc_auc": self.roc_auc,
            "macro_f1": self.macro_f1,
        }

    def to_csv_row(self, model: str) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([format_cell(v) for v in self.table_row(model).values()])
        return buf.getvalue()


def format_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _pm1(a, name) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isin(a, (-1, 1))):
        raise ValueError(f"{name} must contain only -1/+1")
    return a


def confusion(preds, labels) -> Confusion:
    preds = _pm1(preds, "preds")
    labels = _pm1(labels, "labels")
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("no samples")
    p = preds > 0
    t = labels > 0
    return Confusion(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t))
    )


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def mcc(c: Confusion) -> float:
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def f1_positive(c: Confusion) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def f1_negative(c: Confusion) -> float:
    return _ratio(2 * c.tn, 2 * c.tn + c.fn + c.fp)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied pairs count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = _pm1(labels, "labels")
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) points from the highest threshold down, tied scores merged."""
    scores = np.asarray(scores, dtype=float)
    labels = _pm1(labels, "labels")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pos = (labels[order] > 0).astype(float)
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(pos)[distinct]
    fps = np.cumsum(1 - pos)[distinct]
    tpr = np.r_[0.0, tps / pos.sum()]
    fpr = np.r_[0.0, fps / (len(pos) - pos.sum())]
    return fpr, tpr


def roc_auc_trapezoid(scores, labels) -> float:
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def metrics(c: Confusion, scores=None, labels=None, footprint: dict | None = None) -> MetricsReport:
    auc = None
    if scores is not None and labels is not None:
        labels = np.asarray(labels)
        if np.any(labels > 0) and np.any(labels < 0):
            auc = roc_auc(scores, labels)
    return MetricsReport(
        accuracy=_ratio(c.tp + c.tn, c.total),
        f1=f1_positive(c),
        specificity=_ratio(c.tn, c.tn + c.fp),
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        mcc=mcc(c),
        roc_auc=auc,
        macro_f1=(f1_positive(c) + f1_negative(c)) / 2,
        n_samples=c.total,
        n_positive=c.tp + c.fn,
        footprint=dict(footprint or {}),
    )


def evaluate(preds, scores, labels, footprint: dict | None = None) -> MetricsReport:
    return metrics(confusion(preds, labels), scores, labels, footprint)
