"""Classification quality metrics: confusion matrix, precision/recall/F1,
confidence statistics, and reliability-bin calibration analysis.

Predictions that fall outside the label set (the ``unparsed`` sentinel or
any unknown string) count as incorrect: they enter the accuracy denominator,
act as false negatives for their true class, and are excluded from all
confidence statistics.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

from .datasets import normalize_label


@dataclass(frozen=True)
class ConfusionMatrix:
    """Per-(true, predicted) counts over a label set.

    counts[t][p] is the number of outcomes with true label index t predicted
    as label index p. unparsed_by_true[t] counts outcomes of true class t
    whose prediction fell outside the label set; their sum is unparsed_count.
    """

    label_set: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    unparsed_by_true: tuple[int, ...]

    @property
    def unparsed_count(self) -> int:
        return sum(self.unparsed_by_true)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts) + self.unparsed_count


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate quality metrics for one scored run."""

    accuracy: float
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    avg_confidence: float | None
    avg_exec_time_s: float
    n_scored: int
    n_unparsed: int


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    mean_confidence: float
    empirical_accuracy: float
    count: int


@dataclass(frozen=True)
class CalibrationCurve:
    """Equal-width reliability bins over [0, 1] plus summary gaps.

    ece is the count-weighted mean absolute gap between bin confidence and
    bin accuracy; calibration_gap is average confidence minus accuracy for
    the whole run (positive means overconfident).
    """

    n_bins: int
    bins: tuple[CalibrationBin, ...]
    ece: float
    calibration_gap: float


def compute_confusion(
    outcomes: list,
    ground_truths: dict[str, str],
    label_set: tuple[str, ...],
) -> ConfusionMatrix:
    """Tabulate outcomes against ground truths.

    Labels are matched case-insensitively after whitespace normalization.
    Raises ValueError when an outcome's ground truth is missing or outside
    the label set.
    """
    index = {normalize_label(lbl): i for i, lbl in enumerate(label_set)}
    n = len(label_set)
    grid = [[0] * n for _ in range(n)]
    unparsed = [0] * n
    for outcome in outcomes:
        if outcome.sample_id not in ground_truths:
            raise ValueError(f"no ground truth for sample {outcome.sample_id!r}")
        truth = normalize_label(ground_truths[outcome.sample_id])
        if truth not in index:
            raise ValueError(
                f"sample {outcome.sample_id!r}: ground truth {ground_truths[outcome.sample_id]!r} "
                f"is not in the label set"
            )
        t = index[truth]
        p = index.get(normalize_label(outcome.predicted_label))
        if p is None:
            unparsed[t] += 1
        else:
            grid[t][p] += 1
    return ConfusionMatrix(
        label_set=tuple(label_set),
        counts=tuple(tuple(row) for row in grid),
        unparsed_by_true=tuple(unparsed),
    )


def compute_metrics(cm: ConfusionMatrix, outcomes: list) -> MetricsReport:
    """Derive accuracy, per-class precision/recall/F1, and averages.

    Zero denominators yield 0 for precision, recall, and F1. Unparsed
    outcomes are false negatives for their true class and never count
    toward avg_confidence. avg_exec_time_s averages over all outcomes.
    """
    total = cm.total
    if total == 0:
        raise ValueError("cannot compute metrics over zero scored outcomes")
    n = len(cm.label_set)
    correct = sum(cm.counts[i][i] for i in range(n))
    accuracy = correct / total
    per_class: dict[str, ClassMetrics] = {}
    f1_values = []
    for c in range(n):
        tp = cm.counts[c][c]
        fp = sum(cm.counts[t][c] for t in range(n)) - tp
        fn = sum(cm.counts[c]) - tp + cm.unparsed_by_true[c]
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[cm.label_set[c]] = ClassMetrics(precision=precision, recall=recall, f1=f1)
        f1_values.append(f1)
    valid_labels = {normalize_label(lbl) for lbl in cm.label_set}
    confidences = [
        o.confidence
        for o in outcomes
        if o.confidence is not None and normalize_label(o.predicted_label) in valid_labels
    ]
    avg_confidence = math.fsum(confidences) / len(confidences) if confidences else None
    avg_exec = math.fsum(o.exec_time_s for o in outcomes) / len(outcomes) if outcomes else 0.0
    return MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        macro_f1=math.fsum(f1_values) / n,
        avg_confidence=avg_confidence,
        avg_exec_time_s=avg_exec,
        n_scored=total,
        n_unparsed=cm.unparsed_count,
    )


def compute_calibration(
    outcomes: list,
    ground_truths: dict[str, str],
    n_bins: int = 10,
) -> CalibrationCurve:
    """Bin confidence-bearing outcomes into n_bins equal-width reliability
    bins over [0, 1] (last bin includes 1.0) and compute ECE and the
    confidence-accuracy gap.

    Raises ValueError when n_bins < 1 or no outcome carries a confidence.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    with_conf = [o for o in outcomes if o.confidence is not None]
    if not with_conf:
        raise ValueError("no outcome carries a confidence score")
    edges = [i / n_bins for i in range(n_bins + 1)]
    conf_sums = [[] for _ in range(n_bins)]
    correct_counts = [0] * n_bins
    for outcome in with_conf:
        c = outcome.confidence
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"sample {outcome.sample_id!r}: confidence {c} outside [0, 1]")
        idx = min(bisect_right(edges, c) - 1, n_bins - 1)
        conf_sums[idx].append(c)
        truth = ground_truths.get(outcome.sample_id)
        if truth is not None and normalize_label(outcome.predicted_label) == normalize_label(truth):
            correct_counts[idx] += 1
    total_conf = len(with_conf)
    bins = []
    weighted_gaps = []
    for i in range(n_bins):
        count = len(conf_sums[i])
        mean_conf = math.fsum(conf_sums[i]) / count if count else 0.0
        emp_acc = correct_counts[i] / count if count else 0.0
        bins.append(
            CalibrationBin(
                lower=edges[i],
                upper=edges[i + 1],
                mean_confidence=mean_conf,
                empirical_accuracy=emp_acc,
                count=count,
            )
        )
        weighted_gaps.append((count / total_conf) * abs(mean_conf - emp_acc))
    n_correct_all = sum(
        1
        for o in outcomes
        if o.sample_id in ground_truths
        and normalize_label(o.predicted_label) == normalize_label(ground_truths[o.sample_id])
    )
    accuracy = n_correct_all / len(outcomes)
    avg_confidence = math.fsum(o.confidence for o in with_conf) / total_conf
    return CalibrationCurve(
        n_bins=n_bins,
        bins=tuple(bins),
        ece=math.fsum(weighted_gaps),
        calibration_gap=avg_confidence - accuracy,
    )
