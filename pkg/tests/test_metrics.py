"""Confusion matrix, precision/recall/F1, and calibration tests, with an
independent brute-force counting oracle."""

from __future__ import annotations

import math
import random

import pytest

from medbench.backends import ClassificationOutcome, UNPARSED
from medbench.metrics import compute_calibration, compute_confusion, compute_metrics


def outcome(sample_id, label, confidence=None, exec_time=0.0):
    return ClassificationOutcome(
        sample_id=sample_id,
        predicted_label=label,
        confidence=confidence,
        full_response="",
        exec_time_s=exec_time,
    )


def brute_force_scores(pairs, label_set):
    """Independent per-definition counting of accuracy/precision/recall/F1.

    pairs is a list of (ground_truth, predicted) using canonical labels;
    predictions outside label_set count as wrong and as FN for their class.
    """
    total = len(pairs)
    accuracy = sum(1 for gt, pred in pairs if pred == gt) / total
    per_class = {}
    f1s = []
    for c in label_set:
        tp = sum(1 for gt, pred in pairs if gt == c and pred == c)
        fp = sum(1 for gt, pred in pairs if gt != c and pred == c)
        fn = sum(1 for gt, pred in pairs if gt == c and pred != c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class[c] = (p, r, f1)
        f1s.append(f1)
    return accuracy, per_class, math.fsum(f1s) / len(label_set)


def random_instance(rng, n_classes=None, n_outcomes=None):
    labels = tuple(f"class{i}" for i in range(n_classes or rng.randint(2, 6)))
    n = n_outcomes or rng.randint(1, 1000)
    pairs = []
    outcomes = []
    truths = {}
    for i in range(n):
        sid = f"s{i:05d}"
        gt = rng.choice(labels)
        pred = UNPARSED if rng.random() < 0.08 else rng.choice(labels)
        conf = None if rng.random() < 0.2 else round(rng.random(), 3)
        pairs.append((gt, pred))
        outcomes.append(outcome(sid, pred, conf, rng.random()))
        truths[sid] = gt
    return labels, outcomes, truths, pairs


class TestComputeConfusion:
    def test_perfect_predictions(self):
        outcomes = [outcome("a", "x"), outcome("b", "x"), outcome("c", "y"), outcome("d", "y")]
        truths = {"a": "x", "b": "x", "c": "y", "d": "y"}
        cm = compute_confusion(outcomes, truths, ("x", "y"))
        assert cm.counts == ((2, 0), (0, 2))
        assert cm.unparsed_count == 0

    def test_unparsed_goes_to_sentinel_count(self):
        outcomes = [outcome("a", "x"), outcome("b", UNPARSED)]
        truths = {"a": "x", "b": "y"}
        cm = compute_confusion(outcomes, truths, ("x", "y"))
        assert cm.unparsed_count == 1
        assert sum(sum(row) for row in cm.counts) == 1
        assert cm.total == 2

    def test_case_insensitive_matching(self):
        outcomes = [outcome("a", "Lung  Opacity")]
        cm = compute_confusion(outcomes, {"a": "LUNG OPACITY"}, ("lung opacity", "normal"))
        assert cm.counts[0][0] == 1

    def test_missing_ground_truth(self):
        with pytest.raises(ValueError, match="no ground truth"):
            compute_confusion([outcome("a", "x")], {}, ("x",))

    def test_ground_truth_outside_label_set(self):
        with pytest.raises(ValueError, match="not in the label set"):
            compute_confusion([outcome("a", "x")], {"a": "z"}, ("x", "y"))

    def test_matches_brute_force_counter(self):
        rng = random.Random(7)
        labels, outcomes, truths, pairs = random_instance(rng, n_classes=3, n_outcomes=200)
        cm = compute_confusion(outcomes, truths, labels)
        for t, t_label in enumerate(labels):
            for p, p_label in enumerate(labels):
                expected = sum(1 for gt, pred in pairs if gt == t_label and pred == p_label)
                assert cm.counts[t][p] == expected
            assert cm.unparsed_by_true[t] == sum(
                1 for gt, pred in pairs if gt == t_label and pred not in labels
            )


class TestComputeMetrics:
    def test_all_correct(self):
        outcomes = [outcome("a", "x", 1.0), outcome("b", "y", 1.0)]
        truths = {"a": "x", "b": "y"}
        cm = compute_confusion(outcomes, truths, ("x", "y"))
        report = compute_metrics(cm, outcomes)
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0

    def test_hand_computed_grid(self):
        # grid rows (true x pred): [[2,1,0],[0,3,0],[1,0,3]]
        labels = ("a", "b", "c")
        grid = [[2, 1, 0], [0, 3, 0], [1, 0, 3]]
        outcomes = []
        truths = {}
        k = 0
        for t, row in enumerate(grid):
            for p, count in enumerate(row):
                for _ in range(count):
                    sid = f"s{k}"
                    outcomes.append(outcome(sid, labels[p]))
                    truths[sid] = labels[t]
                    k += 1
        cm = compute_confusion(outcomes, truths, labels)
        report = compute_metrics(cm, outcomes)
        assert report.accuracy == pytest.approx(0.8, abs=1e-12)
        assert report.per_class["a"].f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.per_class["b"].f1 == pytest.approx(6 / 7, abs=1e-12)
        assert report.per_class["c"].f1 == pytest.approx(6 / 7, abs=1e-12)
        assert report.macro_f1 == pytest.approx(50 / 63, abs=1e-12)
        assert round(report.macro_f1, 4) == 0.7937

    def test_paper_prefilter_accuracy(self):
        # 100 scripted outcomes with 62 correct -> the pre-filtering figure
        outcomes = []
        truths = {}
        for i in range(100):
            sid = f"s{i:03d}"
            truths[sid] = "normal"
            outcomes.append(outcome(sid, "normal" if i < 62 else "covid", 0.93))
        cm = compute_confusion(outcomes, truths, ("normal", "covid"))
        report = compute_metrics(cm, outcomes)
        assert report.accuracy == 0.62

    def test_unparsed_counts_as_wrong_and_excluded_from_confidence(self):
        outcomes = [outcome("a", "x", 0.9), outcome("b", UNPARSED, 0.8)]
        truths = {"a": "x", "b": "x"}
        cm = compute_confusion(outcomes, truths, ("x",))
        report = compute_metrics(cm, outcomes)
        assert report.accuracy == 0.5
        assert report.avg_confidence == 0.9  # unparsed outcome's 0.8 ignored
        assert report.n_unparsed == 1

    def test_empty_rejected(self):
        cm = compute_confusion([], {}, ("x",))
        with pytest.raises(ValueError, match="zero scored"):
            compute_metrics(cm, [])

    def test_matches_brute_force_on_random_instances(self):
        rng = random.Random(13)
        for _ in range(40):
            labels, outcomes, truths, pairs = random_instance(rng, n_outcomes=rng.randint(1, 300))
            cm = compute_confusion(outcomes, truths, labels)
            report = compute_metrics(cm, outcomes)
            accuracy, per_class, macro = brute_force_scores(pairs, labels)
            assert abs(report.accuracy - accuracy) <= 1e-12
            assert abs(report.macro_f1 - macro) <= 1e-12
            for label in labels:
                p, r, f1 = per_class[label]
                assert abs(report.per_class[label].precision - p) <= 1e-12
                assert abs(report.per_class[label].recall - r) <= 1e-12
                assert abs(report.per_class[label].f1 - f1) <= 1e-12

    def test_permutation_invariance(self):
        rng = random.Random(21)
        labels, outcomes, truths, _ = random_instance(rng, n_classes=4, n_outcomes=150)
        cm = compute_confusion(outcomes, truths, labels)
        report = compute_metrics(cm, outcomes)
        shuffled = outcomes[:]
        rng.shuffle(shuffled)
        cm2 = compute_confusion(shuffled, truths, labels)
        report2 = compute_metrics(cm2, shuffled)
        assert report == report2  # fsum makes even the float means exact

    def test_macro_f1_invariant_under_relabeling(self):
        rng = random.Random(34)
        labels, outcomes, truths, _ = random_instance(rng, n_classes=4, n_outcomes=200)
        permuted = (labels[2], labels[0], labels[3], labels[1])
        report = compute_metrics(compute_confusion(outcomes, truths, labels), outcomes)
        report_p = compute_metrics(compute_confusion(outcomes, truths, permuted), outcomes)
        assert report.macro_f1 == report_p.macro_f1
        for label in labels:
            assert report.per_class[label] == report_p.per_class[label]

    def test_all_scores_bounded(self):
        rng = random.Random(55)
        for _ in range(20):
            labels, outcomes, truths, _ = random_instance(rng, n_outcomes=rng.randint(1, 100))
            report = compute_metrics(compute_confusion(outcomes, truths, labels), outcomes)
            values = [report.accuracy, report.macro_f1]
            for cls in report.per_class.values():
                values += [cls.precision, cls.recall, cls.f1]
            assert all(0.0 <= v <= 1.0 for v in values)


class TestComputeCalibration:
    def test_perfectly_calibrated(self):
        outcomes = [outcome(f"s{i}", "x", 1.0) for i in range(5)]
        truths = {f"s{i}": "x" for i in range(5)}
        curve = compute_calibration(outcomes, truths, n_bins=10)
        assert curve.ece == 0.0
        assert curve.calibration_gap == 0.0

    def test_single_bin_hand_computation(self):
        # 4 outcomes at 0.9, 3 correct: |0.9 - 0.75| with full weight
        outcomes = [outcome(f"s{i}", "x", 0.9) for i in range(4)]
        truths = {"s0": "x", "s1": "x", "s2": "x", "s3": "y"}
        curve = compute_calibration(outcomes, truths, n_bins=10)
        assert curve.ece == pytest.approx(0.15, abs=1e-12)
        top_bin = curve.bins[9]
        assert top_bin.count == 4
        assert top_bin.mean_confidence == pytest.approx(0.9, abs=1e-15)
        assert top_bin.empirical_accuracy == 0.75

    def test_paper_gpt4o_chest_ct_gap(self):
        # avg confidence 0.91 with accuracy 0.22 -> gap 0.69
        outcomes = []
        truths = {}
        for i in range(100):
            sid = f"s{i:03d}"
            truths[sid] = "normal"
            outcomes.append(outcome(sid, "normal" if i < 22 else "adenocarcinoma", 0.91))
        curve = compute_calibration(outcomes, truths, n_bins=10)
        assert curve.calibration_gap == pytest.approx(0.69, abs=1e-9)

    def test_bins_partition_unit_interval(self):
        rng = random.Random(3)
        outcomes = [outcome(f"s{i}", "x", rng.random()) for i in range(500)]
        truths = {f"s{i}": "x" for i in range(500)}
        curve = compute_calibration(outcomes, truths, n_bins=7)
        assert curve.bins[0].lower == 0.0
        assert curve.bins[-1].upper == 1.0
        for left, right in zip(curve.bins, curve.bins[1:]):
            assert left.upper == right.lower
        assert sum(b.count for b in curve.bins) == 500

    def test_boundary_confidences_bin_correctly(self):
        outcomes = [outcome("a", "x", 0.3), outcome("b", "x", 1.0), outcome("c", "x", 0.0)]
        truths = {"a": "x", "b": "x", "c": "x"}
        curve = compute_calibration(outcomes, truths, n_bins=10)
        assert curve.bins[3].count == 1  # 0.3 belongs to [0.3, 0.4)
        assert curve.bins[9].count == 1  # 1.0 belongs to the last bin
        assert curve.bins[0].count == 1

    def test_ece_definition_matches_by_hand(self):
        rng = random.Random(10)
        outcomes = []
        truths = {}
        for i in range(300):
            sid = f"s{i}"
            conf = rng.random()
            correct = rng.random() < conf
            outcomes.append(outcome(sid, "x", conf))
            truths[sid] = "x" if correct else "y"
        curve = compute_calibration(outcomes, truths, n_bins=10)
        expected = math.fsum(
            (b.count / 300) * abs(b.mean_confidence - b.empirical_accuracy) for b in curve.bins
        )
        assert curve.ece == pytest.approx(expected, abs=1e-15)
        assert 0.0 <= curve.ece <= 1.0

    def test_requires_confidences(self):
        with pytest.raises(ValueError, match="confidence"):
            compute_calibration([outcome("a", "x", None)], {"a": "x"}, n_bins=10)

    def test_requires_positive_bins(self):
        with pytest.raises(ValueError, match="n_bins"):
            compute_calibration([outcome("a", "x", 0.5)], {"a": "x"}, n_bins=0)
