"""Classification and regression metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

MSE_SCALE = 1e5


class DegenerateTarget(ValueError):
    pass


def confusion_matrix(y_true, y_pred, classes=None) -> tuple[list, np.ndarray]:
    y_true = np.asarray(y_true, dtype=object)
    y_pred = np.asarray(y_pred, dtype=object)
    if classes is None:
        classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        cm[index[t], index[p]] += 1
    return list(classes), cm


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=object)
    if len(y_true) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(y_true == np.asarray(y_pred, dtype=object)))


def per_class_prf(cm: np.ndarray):
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    true = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return precision, recall, f1


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    classes: list = field(default_factory=list)
    confusion: list = field(default_factory=list)
    support: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(y_true, y_pred, classes=None) -> MetricsReport:
    """Macro averages over ``classes`` (default: classes present in either vector)."""
    classes, cm = confusion_matrix(y_true, y_pred, classes)
    # macro averages only over classes that appear in the test labels
    present = cm.sum(axis=1) > 0
    p, r, f = per_class_prf(cm)
    return MetricsReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=float(p[present].mean()),
        recall=float(r[present].mean()),
        f1=float(f[present].mean()),
        classes=classes,
        confusion=cm.tolist(),
        support=int(cm.sum()),
    )


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    return float(np.mean((y_true - np.asarray(y_pred, dtype=np.float64)) ** 2))


def mse_scaled(y_true, y_pred) -> float:
    """MSE divided by 1e5, the reporting scale for window regressions."""
    return mse(y_true, y_pred) / MSE_SCALE


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateTarget("target has zero variance; R^2 is undefined (reported as 0)")
    return 1.0 - float(np.sum((y_true - np.asarray(y_pred, dtype=np.float64)) ** 2)) / ss_tot


@dataclass
class RegressionReport:
    mse: float
    mse_scaled: float
    r2: float
    degenerate: bool = False
    support: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def regression_report(y_true, y_pred) -> RegressionReport:
    try:
        r2, degenerate = r2_score(y_true, y_pred), False
    except DegenerateTarget:
        r2, degenerate = 0.0, True
    return RegressionReport(mse(y_true, y_pred), mse_scaled(y_true, y_pred), r2, degenerate, len(y_true))
