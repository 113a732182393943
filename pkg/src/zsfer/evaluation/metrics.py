"""Classification and regression metrics.

Values are fractions in [0, 1]; reports multiply by 100 only when formatted.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..errors import EmptyInput, LabelOutOfRange, ShapeMismatch, ZeroVariance


@dataclass
class ClassificationReport:
    confusion: np.ndarray
    per_class_recall: np.ndarray
    support: np.ndarray
    uar: float
    war: float
    macro_f1: float
    macro_auc: float
    class_names: list[str] = field(default_factory=list)
    fold_plan: str = ""

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def summary(self) -> dict[str, float]:
        return {"UAR": self.uar, "WAR": self.war, "F1": self.macro_f1, "AUC": self.macro_auc}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.summary().items():
            w.writerow([k, f"{100 * v:.2f}"])
        w.writerow([])
        w.writerow(["class", "support", "recall"])
        for name, s, r in zip(self._names(), self.support, self.per_class_recall):
            w.writerow([name, int(s), "" if s == 0 else f"{100 * r:.2f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["  ".join(f"{k} {100 * v:6.2f}" for k, v in self.summary().items())]
        if self.fold_plan:
            lines.append(f"folds: {self.fold_plan}")
        width = max(len(n) for n in self._names())
        for name, s, r in zip(self._names(), self.support, self.per_class_recall):
            rec = "   -  " if s == 0 else f"{100 * r:6.2f}"
            lines.append(f"  {name:<{width}}  n={int(s):<5d} recall {rec}")
        return "\n".join(lines)

    def _names(self):
        return self.class_names or [str(i) for i in range(self.n_classes)]


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """ROC AUC via the rank-sum statistic (ties count one half)."""
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores)
    return (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def classification_metrics(y_true, y_prob, class_names=None, fold_plan: str = "") -> ClassificationReport:
    """UAR/WAR/macro-F1/macro-AUC from integer labels and (B, N) probability rows.

    Predictions are row argmaxes with ties going to the lowest index. Macro F1
    averages over all N classes (classes never seen nor predicted score 0);
    macro AUC averages one-vs-rest AUC over classes with both positives and
    negatives.
    """
    y = np.asarray(y_true)
    p = np.asarray(y_prob, dtype=np.float64)
    if y.size == 0 or p.size == 0:
        raise EmptyInput("no samples to evaluate")
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{y.shape[0]} labels vs probability array {p.shape}")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-4):
        raise ValueError("probability rows must sum to 1 within 1e-4")
    n = p.shape[1]
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= n:
        raise LabelOutOfRange(f"labels must be integers in [0, {n})")
    pred = np.argmax(p, axis=1)
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    tp = np.diag(conf)
    present = support > 0
    recall = np.where(present, tp / np.maximum(support, 1), 0.0)
    denom = support + predicted
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    aucs = [_binary_auc(p[:, c], y == c) for c in range(n) if 0 < support[c] < y.size]
    return ClassificationReport(
        confusion=conf,
        per_class_recall=recall,
        support=support,
        uar=float(recall[present].mean()),
        war=float(tp.sum() / y.size),
        macro_f1=float(f1.mean()),
        macro_auc=float(np.mean(aucs)) if aucs else float("nan"),
        class_names=list(class_names) if class_names is not None else [],
        fold_plan=fold_plan,
    )


@dataclass
class RegressionReport:
    targets: list[str]
    mae: np.ndarray
    rmse: np.ndarray
    pcc: np.ndarray  # NaN where a series is constant

    def rows(self):
        return list(zip(self.targets, self.mae, self.rmse, self.pcc))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target", "MAE", "RMSE", "PCC"])
        for t, a, r, c in self.rows():
            w.writerow([t, f"{a:.4f}", f"{r:.4f}", "undefined" if math.isnan(c) else f"{c:.4f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(len(t) for t in self.targets)
        lines = [f"{'target':<{width}}    MAE    RMSE    PCC"]
        for t, a, r, c in self.rows():
            pcc = "  undef" if math.isnan(c) else f"{c:7.3f}"
            lines.append(f"{t:<{width}}  {a:6.3f}  {r:6.3f}  {pcc}")
        return "\n".join(lines)


def regression_metrics(y_true, y_pred, targets=None) -> RegressionReport:
    t = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if t.ndim == 1:
        t, p = t[:, None], p[:, None] if p.ndim == 1 else p
    if t.shape != p.shape:
        raise ShapeMismatch(f"targets {t.shape} vs predictions {p.shape}")
    if t.shape[0] == 0:
        raise EmptyInput("no samples")
    err = p - t
    mae = np.abs(err).mean(axis=0)
    rmse = np.sqrt((err**2).mean(axis=0))
    tc = t - t.mean(axis=0)
    pc = p - p.mean(axis=0)
    sxx = (tc * tc).sum(axis=0)
    syy = (pc * pc).sum(axis=0)
    pcc = np.full(t.shape[1], np.nan)
    ok = (sxx > 0) & (syy > 0) & (t.shape[0] >= 2)
    pcc[ok] = np.clip((tc * pc).sum(axis=0)[ok] / np.sqrt(sxx[ok] * syy[ok]), -1.0, 1.0)
    names = list(targets) if targets is not None else [f"target{i}" for i in range(t.shape[1])]
    if not ok.all():
        bad = [names[i] for i in np.flatnonzero(~ok)]
        warnings.warn(f"PCC undefined for constant series: {bad}", ZeroVariance, stacklevel=2)
    return RegressionReport(names, mae, rmse, pcc)
