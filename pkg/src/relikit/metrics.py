"""Reliability metrics over prediction records.

Calibration metrics (:func:`ece`, :func:`ada_ece`, :func:`ks_error`) compare
confidence against empirical accuracy. Rank metrics (:func:`prr`,
:func:`auroc` and the OOD wrappers) depend on the ordering of confidences
only, so they are invariant under strictly increasing transforms of the
score. Segmentation quality is measured by :func:`miou` over a confusion
matrix pooled across images.

All metric functions raise :class:`~relikit.errors.MetricError` when their
preconditions fail (empty inputs, no evaluable classes, degenerate
correctness patterns) instead of returning sentinels.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .confidence import ConfidenceScore, RecordSet, confidence_map
from .errors import MetricError
from .tensors import LabelMap, ProbTensor

DEFAULT_BINS = 15


class BinStrategy(str, Enum):
    EQUAL_WIDTH = "equal_width"
    EQUAL_POPULATION = "equal_population"


@dataclass(frozen=True)
class BinPartition:
    """Confidence bins with per-bin population, mean confidence and accuracy.

    ``lower``/``upper`` give each bin's confidence range: fixed edges
    i/m, (i+1)/m for equal-width bins (the last bin closed at 1), observed
    min/max for equal-population bins. Empty bins have NaN statistics and
    contribute zero calibration error.
    """

    strategy: BinStrategy
    total: int
    count: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    @property
    def bins(self) -> int:
        return self.count.shape[0]

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.accuracy - self.mean_confidence)

    def expected_calibration_error(self) -> float:
        filled = self.count > 0
        weights = self.count[filled] / self.total
        return float((weights * self.gap[filled]).sum())


def _normalized_confidence(records: RecordSet) -> np.ndarray:
    """Map confidences onto [0, 1] for binning.

    Scores already inside [0, 1] pass through untouched. Anything else
    (e.g. negative entropy) is min-max normalized; a constant score maps
    to 0.5.
    """
    conf = records.confidence
    lo = conf.min()
    hi = conf.max()
    if lo >= 0.0 and hi <= 1.0:
        return conf
    if hi == lo:
        return np.full_like(conf, 0.5)
    return (conf - lo) / (hi - lo)


def bin_partition(records: RecordSet, bins: int = DEFAULT_BINS,
                  strategy: BinStrategy = BinStrategy.EQUAL_WIDTH) -> BinPartition:
    """Partition records into confidence bins.

    Equal-width bins split [0, 1] into ``bins`` fixed intervals; a record
    with confidence exactly 1 lands in the last bin. Equal-population bins
    sort records by confidence (stable, so ties keep record order) and cut
    the sorted sequence into ``bins`` runs whose sizes differ by at most
    one, the first ``n mod bins`` runs taking the extra record.
    """
    n = len(records)
    if n == 0:
        raise MetricError("cannot bin an empty record set")
    if bins < 1:
        raise MetricError(f"bin count must be >= 1, got {bins}")
    strategy = BinStrategy(strategy)
    conf = _normalized_confidence(records)
    correct = records.correct.astype(np.float64)
    if strategy is BinStrategy.EQUAL_WIDTH:
        idx = np.minimum(np.floor(conf * bins).astype(np.int64), bins - 1)
        count = np.bincount(idx, minlength=bins)
        sum_conf = np.bincount(idx, weights=conf, minlength=bins)
        sum_correct = np.bincount(idx, weights=correct, minlength=bins)
        lower = np.arange(bins) / bins
        upper = np.arange(1, bins + 1) / bins
    else:
        order = np.argsort(conf, kind="mergesort")
        sizes = np.full(bins, n // bins, dtype=np.int64)
        sizes[: n % bins] += 1
        stops = np.cumsum(sizes)
        starts = stops - sizes
        sorted_conf = conf[order]
        sorted_correct = correct[order]
        cum_conf = np.concatenate([[0.0], np.cumsum(sorted_conf)])
        cum_correct = np.concatenate([[0.0], np.cumsum(sorted_correct)])
        count = sizes
        sum_conf = cum_conf[stops] - cum_conf[starts]
        sum_correct = cum_correct[stops] - cum_correct[starts]
        lower = np.full(bins, np.nan)
        upper = np.full(bins, np.nan)
        filled = sizes > 0
        lower[filled] = sorted_conf[starts[filled]]
        upper[filled] = sorted_conf[stops[filled] - 1]
    with np.errstate(invalid="ignore"):
        mean_conf = np.where(count > 0, sum_conf / np.maximum(count, 1), np.nan)
        acc = np.where(count > 0, sum_correct / np.maximum(count, 1), np.nan)
    return BinPartition(
        strategy=strategy,
        total=n,
        count=count.astype(np.int64),
        lower=lower,
        upper=upper,
        mean_confidence=mean_conf,
        accuracy=acc,
    )


def ece(records: RecordSet, bins: int = DEFAULT_BINS,
        strategy: BinStrategy = BinStrategy.EQUAL_WIDTH) -> float:
    """Expected calibration error: sum_i (|B_i|/n) * |acc(B_i) - conf(B_i)|."""
    return bin_partition(records, bins, strategy).expected_calibration_error()


def ada_ece(records: RecordSet, bins: int = DEFAULT_BINS) -> float:
    """Adaptive ECE: equal-population bins remove the binning artifacts."""
    return ece(records, bins, BinStrategy.EQUAL_POPULATION)


def ks_error(records: RecordSet) -> float:
    """Binning-free calibration error.

    Sort records by confidence ascending (stable) and return the largest
    absolute difference between the running sums of confidence and of
    correctness, divided by n.
    """
    n = len(records)
    if n == 0:
        raise MetricError("cannot compute KS error of an empty record set")
    order = np.argsort(records.confidence, kind="mergesort")
    cum_conf = np.cumsum(records.confidence[order])
    cum_correct = np.cumsum(records.correct[order].astype(np.float64))
    return float(np.abs(cum_conf - cum_correct).max() / n)


@dataclass(frozen=True)
class MiouResult:
    miou: float
    per_class: np.ndarray  # IoU per class, NaN where the class never occurs


def confusion_matrix(predicted, labels: LabelMap, classes: int, ignore_value: int = 255) -> np.ndarray:
    """(classes, classes) count matrix, rows = actual, columns = predicted."""
    pred = predicted.data if isinstance(predicted, LabelMap) else np.asarray(predicted)
    pred = pred.astype(np.int64)
    actual = labels.data.astype(np.int64)
    if pred.shape != actual.shape:
        raise MetricError(f"prediction/label shapes differ: {pred.shape} vs {actual.shape}")
    valid = actual != ignore_value
    pred = pred[valid]
    actual = actual[valid]
    if pred.size and (pred.min() < 0 or pred.max() >= classes):
        raise MetricError("predicted class outside [0, classes)")
    if actual.size and (actual.min() < 0 or actual.max() >= classes):
        raise MetricError("actual class outside [0, classes)")
    return np.bincount(actual * classes + pred, minlength=classes * classes).reshape(classes, classes)


def iou_from_confusion(confusion: np.ndarray) -> MiouResult:
    """Per-class intersection over union from a pooled confusion matrix.

    Classes that never occur (no true, predicted, or confused pixel) are
    excluded from the mean and reported as NaN.
    """
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    union = tp + fp + fn
    evaluable = union > 0
    if not evaluable.any():
        raise MetricError("no evaluable classes: every pixel is ignored")
    per_class = np.full(confusion.shape[0], np.nan)
    per_class[evaluable] = tp[evaluable] / union[evaluable]
    return MiouResult(float(per_class[evaluable].mean()), per_class)


def miou(predictions: list, labels: list[LabelMap], classes: int, ignore_value: int = 255) -> MiouResult:
    """Mean IoU with the confusion matrix pooled across all images."""
    if len(predictions) != len(labels) or not predictions:
        raise MetricError("miou needs equal-length, non-empty prediction and label lists")
    pooled = np.zeros((classes, classes), dtype=np.int64)
    for pred, lab in zip(predictions, labels):
        pooled += confusion_matrix(pred, lab, classes, ignore_value)
    return iou_from_confusion(pooled)


def auroc(positive, negative) -> float:
    """Probability a random positive outscores a random negative, ties at half credit.

    Computed from tie-averaged ranks (Mann-Whitney U), O(n log n).
    """
    pos = np.asarray(positive, dtype=np.float64).reshape(-1)
    neg = np.asarray(negative, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise MetricError("auroc needs at least one score on each side")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise MetricError("auroc scores must be finite")
    merged = np.sort(np.concatenate([pos, neg]), kind="mergesort")
    lo = np.searchsorted(merged, pos, side="left")
    hi = np.searchsorted(merged, pos, side="right")
    ranks = (lo + hi + 1) * 0.5
    u = ranks.sum() - pos.size * (pos.size + 1) * 0.5
    return float(u / (pos.size * neg.size))


def rejection_curve(records: RecordSet) -> np.ndarray:
    """Errors remaining (as a fraction of n) after rejecting k least-confident records.

    Index k of the returned length n+1 array is the number of rejections;
    rejected records count as handled, so the curve starts at the error
    rate and ends at 0. Tied records are rejected in record order.
    """
    n = len(records)
    if n == 0:
        raise MetricError("cannot build a rejection curve from an empty record set")
    order = np.argsort(records.confidence, kind="mergesort")
    rejected = np.concatenate([[0.0], np.cumsum((~records.correct[order]).astype(np.float64))])
    total = float((~records.correct).sum())
    return (total - rejected) / n


def prr(records: RecordSet) -> float:
    """Rejection gain over random, as a percentage of the oracle's gain.

    The model curve rejects least-confident first; the random baseline's
    area is e/2 for error rate e; the oracle rejects every error first.
    100 means oracle-grade ordering, 0 means no better than random,
    negative means worse than random. Undefined (raises) when the records
    are all correct or all incorrect.

    All three curves take values (errors remaining)/n on a 1/n grid, so
    their trapezoid areas scaled by 2 n^2 are integers. The areas are
    accumulated in that integer space and only the final ratio touches
    floating point, which keeps the result exact up to one rounding even
    when the random/oracle gap is tiny.
    """
    n = len(records)
    if n < 2:
        raise MetricError("prr needs at least two records")
    total_errors = int(n - records.correct.sum())
    if total_errors == 0 or total_errors == n:
        raise MetricError("prr is undefined for all-correct or all-incorrect records")
    order = np.argsort(records.confidence, kind="mergesort")
    rejected = np.concatenate([[0], np.cumsum((~records.correct[order]).astype(np.int64))])
    # model[k] = n * (errors remaining after rejecting k least-confident)
    model = total_errors - rejected
    oracle = np.maximum(0, total_errors - np.arange(n + 1, dtype=np.int64))
    model_area = int(model[0] + model[-1] + 2 * model[1:-1].sum())
    oracle_area = int(oracle[0] + oracle[-1] + 2 * oracle[1:-1].sum())
    random_area = total_errors * n  # 2 n^2 * (e/n)/2
    return float(100.0 * ((random_area - model_area) / (random_area - oracle_area)))


def image_confidence(probs: ProbTensor, labels: LabelMap | None = None, *,
                     score: ConfidenceScore = ConfidenceScore.MAX_PROB,
                     ignore_value: int = 255) -> float:
    """Mean per-pixel confidence of one image, over non-ignored pixels."""
    conf, _ = confidence_map(probs, score)
    if labels is None:
        return float(conf.mean())
    valid = labels.data != ignore_value
    if not valid.any():
        raise MetricError("image has no non-ignored pixels")
    return float(conf[valid].mean())


def ood_image_auroc(id_probs: list[ProbTensor], ood_probs: list[ProbTensor], *,
                    score: ConfidenceScore = ConfidenceScore.MAX_PROB,
                    id_labels: list[LabelMap] | None = None,
                    ood_labels: list[LabelMap] | None = None,
                    ignore_value: int = 255) -> float:
    """Image-level OOD separation: in-domain images are the positive class.

    Each image is reduced to its mean pixel confidence; the AUROC then
    measures how reliably in-domain images are the more confident ones.
    """
    id_scores = [
        image_confidence(p, id_labels[i] if id_labels else None, score=score, ignore_value=ignore_value)
        for i, p in enumerate(id_probs)
    ]
    ood_scores = [
        image_confidence(p, ood_labels[i] if ood_labels else None, score=score, ignore_value=ignore_value)
        for i, p in enumerate(ood_probs)
    ]
    return auroc(id_scores, ood_scores)


def pixel_ood_auroc(probs: list[ProbTensor], masks: list[np.ndarray], *,
                    score: ConfidenceScore = ConfidenceScore.MAX_PROB) -> float:
    """Pixel-level OOD separation, pooled across images.

    ``masks`` flag unknown-class pixels with True. Known-class pixels are
    the positive (more confident) class.
    """
    if len(probs) != len(masks) or not probs:
        raise MetricError("pixel_ood_auroc needs equal-length, non-empty lists")
    known, unknown = [], []
    for p, mask in zip(probs, masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (p.height, p.width):
            raise MetricError(f"mask shape {mask.shape} does not match image {(p.height, p.width)}")
        conf, _ = confidence_map(p, score)
        known.append(conf[~mask])
        unknown.append(conf[mask])
    return auroc(np.concatenate(known), np.concatenate(unknown))
