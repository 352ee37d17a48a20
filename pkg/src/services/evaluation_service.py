"""
Evaluation service: confusion matrix, threshold metrics and ROC analysis.

All metrics are computed directly from counts and ranks; the positive
class is Unhealthy (label 1) and a score equal to the threshold counts as
a positive prediction.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from src.models import ConfusionMatrix, MetricsReport
from src.services.error_handler import InputError, UndefinedMetricError
from src.services.logging_service import get_logger
from src.services.model_service import Classifier, predict_proba
from src.services.preprocess_service import ArrayDataset

logger = get_logger(__name__)

Vector = Union[np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class ThresholdMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: Tuple[str, ...] = ()


def _labels_and_scores(y_true: Vector, scores: Vector) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(y_true)
    values = np.asarray(scores, dtype=np.float64)
    if labels.ndim != 1 or values.ndim != 1 or len(labels) != len(values):
        raise InputError(f"labels ({labels.shape}) and scores ({values.shape}) must be equal-length vectors")
    if len(labels) == 0:
        raise InputError("cannot evaluate an empty set")
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be 0 (Healthy) or 1 (Unhealthy)")
    return labels.astype(np.int64), values


def confusion_matrix(y_true: Vector, scores: Vector, threshold: float = 0.5) -> ConfusionMatrix:
    """Tally predictions (score >= threshold means Unhealthy) against labels."""
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold!r}")
    labels, values = _labels_and_scores(y_true, scores)
    predicted = values >= threshold
    actual = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
    )


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def f1_from_pr(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0.0 when both are 0."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise InputError(f"precision and recall must lie in [0, 1], got ({precision!r}, {recall!r})")
    if precision + recall == 0.0:
        logger.debug("degenerate_f1", precision=precision, recall=recall)
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics_from_confusion(cm: ConfusionMatrix) -> ThresholdMetrics:
    """Accuracy, precision, recall and F1; undefined ratios become 0 and are flagged."""
    if cm.total == 0:
        raise InputError("confusion matrix is empty")
    degenerate = []

    precision = _ratio(cm.tp, cm.tp + cm.fp)
    if precision is None:
        degenerate.append('precision')
        precision = 0.0
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if recall is None:
        degenerate.append('recall')
        recall = 0.0
    if precision + recall == 0.0:
        degenerate.append('f1')
    f1 = f1_from_pr(precision, recall)

    return ThresholdMetrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=tuple(degenerate),
    )


def roc_auc(y_true: Vector, scores: Vector) -> float:
    """Mann-Whitney AUC from average ranks; ties earn half credit."""
    labels, values = _labels_and_scores(y_true, scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(values, method='average')
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(y_true: Vector, scores: Vector) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """False/true positive rates at each distinct score, highest threshold first.

    The first point is (0, 0) at threshold +inf; the trapezoidal area
    under the returned curve equals ``roc_auc``.
    """
    labels, values = _labels_and_scores(y_true, scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs at least one positive and one negative label")

    order = np.argsort(-values, kind='mergesort')
    sorted_scores = values[order]
    sorted_labels = labels[order]
    # last index of each run of equal scores
    distinct = np.r_[np.nonzero(np.diff(sorted_scores))[0], len(sorted_scores) - 1]
    tps = np.cumsum(sorted_labels)[distinct]
    fps = (distinct + 1) - tps

    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, sorted_scores[distinct]]
    return fpr, tpr, thresholds


def build_report(y_true: Vector, scores: Vector, threshold: float = 0.5) -> MetricsReport:
    """MetricsReport from labels and scores."""
    cm = confusion_matrix(y_true, scores, threshold)
    metrics = metrics_from_confusion(cm)
    try:
        auc: Optional[float] = roc_auc(y_true, scores)
    except UndefinedMetricError:
        logger.warning("auc_undefined_single_class", n=cm.total)
        auc = None
    degenerate = metrics.degenerate + (('auc',) if auc is None else ())
    return MetricsReport(
        accuracy=metrics.accuracy,
        precision=metrics.precision,
        recall=metrics.recall,
        f1=metrics.f1,
        auc=auc,
        threshold=threshold,
        n_samples=cm.total,
        confusion=cm,
        degenerate=degenerate,
    )


def evaluate(
    model: Classifier,
    dataset: ArrayDataset,
    threshold: float = 0.5,
    batch_size: int = 32,
) -> Tuple[MetricsReport, np.ndarray]:
    """Score ``dataset`` with ``model`` and summarize; also returns the scores."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate an empty dataset")
    scores = predict_proba(model, dataset.images, batch_size=batch_size)
    report = build_report(dataset.labels, scores, threshold)
    logger.info(
        "evaluation_completed",
        n=report.n_samples,
        threshold=threshold,
        **report.display(),
    )
    return report, scores


def report_from_summary(
    accuracy: float,
    precision: float,
    recall: float,
    auc: Optional[float] = None,
    degenerate: Sequence[str] = (),
) -> MetricsReport:
    """Report for published figures that only list accuracy, precision and recall."""
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1_from_pr(precision, recall),
        auc=auc,
        threshold=None,
        n_samples=0,
        degenerate=tuple(degenerate),
    )
