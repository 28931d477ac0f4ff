"""Confusion-matrix metrics against an independent pure-Python recount oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distilform import metrics as M
from distilform.errors import ContractError


def recount_oracle(preds, labels, num_classes):
    """Brute-force per-class counting loop, no vectorization."""
    matrix = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(preds, labels):
        matrix[t][p] += 1
    total = len(preds)
    correct = sum(matrix[c][c] for c in range(num_classes))
    per_class = []
    for c in range(num_classes):
        tp = matrix[c][c]
        fp = sum(matrix[t][c] for t in range(num_classes)) - tp
        fn = sum(matrix[c][p] for p in range(num_classes)) - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append((precision, recall, f1))
    macro_f1 = sum(f for _, _, f in per_class) / num_classes
    return matrix, correct / total, per_class, macro_f1


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        cm = M.confusion([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert np.array_equal(cm.counts, np.diag([1, 2, 1]))

    def test_hand_enumerated_binary_case(self):
        cm = M.confusion([1, 1, 0, 0], [1, 0, 1, 0], 2)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (1, 1, 1, 1)

    def test_length_mismatch_and_range(self):
        with pytest.raises(ContractError):
            M.confusion([0, 1], [0], 2)
        with pytest.raises(ContractError, match="2"):
            M.confusion([0, 2], [0, 1], 2)

    def test_binary_view_agrees_with_matrix(self):
        cm = M.confusion([1, 1, 0, 0, 1], [1, 0, 1, 0, 1], 2)
        tp, fp, fn, tn = cm.one_vs_rest(1)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)
        rebuilt = M.ConfusionMatrix.from_binary_counts(tp, tn, fp, fn)
        assert rebuilt == cm

    def test_thousand_random_cases_match_recount(self):
        g = np.random.Generator(np.random.PCG64(123))
        for _ in range(1000):
            c = int(g.integers(2, 5))
            n = int(g.integers(1, 40))
            preds = g.integers(0, c, size=n).tolist()
            labels = g.integers(0, c, size=n).tolist()
            matrix, acc, per_class, macro = recount_oracle(preds, labels, c)
            report = M.compute_report(preds, labels, c)
            assert report.confusion.counts.tolist() == matrix
            assert report.accuracy == acc
            for i, (p, r, f) in enumerate(per_class):
                assert report.precision[i] == p
                assert report.recall[i] == r
                assert report.f1[i] == f
            assert report.macro_f1 == macro


class TestAccuracy:
    def test_hand_substitution(self):
        cm = M.ConfusionMatrix.from_binary_counts(tp=2, tn=3, fp=1, fn=4)
        assert M.accuracy(cm) == 0.5

    def test_perfect_and_all_wrong(self):
        assert M.accuracy(M.confusion([0, 1], [0, 1], 2)) == 1.0
        assert M.accuracy(M.confusion([1, 0], [0, 1], 2)) == 0.0


class TestPrecisionRecall:
    def test_hand_substitution(self):
        cm = M.ConfusionMatrix.from_binary_counts(tp=3, tn=0, fp=1, fn=1)
        assert M.precision_recall(cm) == (0.75, 0.75)

    def test_no_predicted_positives_flagged(self):
        report = M.compute_report([0, 0, 0], [0, 1, 0], 2)
        assert report.precision[1] == 0.0
        assert any("precision undefined for class 1" in note for note in report.degenerate)

    def test_no_true_positives_flagged(self):
        report = M.compute_report([1, 1], [0, 0], 2)
        assert report.recall[1] == 0.0
        assert any("recall undefined for class 1" in note for note in report.degenerate)

    def test_positive_class_swap_metamorphic(self):
        cm = M.confusion([1, 1, 0, 0, 1, 0], [1, 0, 1, 0, 1, 1], 2)
        p0, r0 = M.precision_recall(cm, positive_class=0)
        tp, fp, fn, tn = cm.one_vs_rest(1)
        # class-0 view swaps TP<->TN and FP<->FN relative to the class-1 view
        assert p0 == tn / (tn + fn)
        assert r0 == tn / (tn + fp)


class TestF1:
    def test_harmonic_mean_of_equals(self):
        assert M.f1(0.5, 0.5) == 0.5

    def test_direct_evaluation(self):
        assert M.f1(0.8, 2 / 3) == pytest.approx(8 / 11, abs=1e-12)

    def test_zero_sides(self):
        assert M.f1(0.0, 0.7) == 0.0
        assert M.f1(0.7, 0.0) == 0.0

    @given(st.floats(0.001, 1.0), st.floats(0.001, 1.0))
    @settings(deadline=None)
    def test_harmonic_mean_bounds(self, p, r):
        score = M.f1(p, r)
        assert min(p, r) - 1e-12 <= score <= max(p, r) + 1e-12
        assert 0.0 <= score <= 1.0


class TestMacroF1:
    def test_perfect_multiclass(self):
        assert M.macro_f1(M.confusion([0, 1, 2], [0, 1, 2], 3)) == 1.0

    def test_symmetric_binary_equals_per_class(self):
        cm = M.ConfusionMatrix.from_binary_counts(tp=3, tn=3, fp=2, fn=2)
        p, r = M.precision_recall(cm, 1)
        assert M.macro_f1(cm) == M.f1(p, r)

    def test_three_class_hand_average(self):
        preds = [0, 1, 2, 2, 1, 0, 0]
        labels = [0, 1, 1, 2, 2, 0, 2]
        _, _, per_class, macro = recount_oracle(preds, labels, 3)
        assert M.macro_f1(M.confusion(preds, labels, 3)) == macro


class TestReportRendering:
    def test_text_mirrors_count_table(self):
        report = M.compute_report([1, 1, 0, 0], [1, 0, 1, 0], 2)
        text = report.to_text()
        assert "rows = true" in text
        assert "accuracy  0.5" in text

    def test_csv_roundtrip_fields(self):
        report = M.compute_report([1, 0, 1], [1, 1, 1], 2)
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "metric,class,value"
        parsed = {(f[0], f[1]): f[2] for f in (line.split(",") for line in lines[1:])}
        assert float(parsed[("accuracy", "")]) == report.accuracy

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=50))
    @settings(deadline=None)
    def test_all_metrics_in_unit_interval(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [t for _, t in pairs]
        report = M.compute_report(preds, labels, 3)
        values = [report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1]
        values += report.precision + report.recall + report.f1
        assert all(0.0 <= v <= 1.0 for v in values)
