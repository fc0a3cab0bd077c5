import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imago.errors import ValidationError
from imago.metrics import (
    ClassMetrics,
    ConfusionMatrix,
    confusion,
    conservativeness,
    evaluate_pairs,
    mcae,
    per_class,
    per_class_score,
    regions,
    total_accuracy,
)

matrix_st = st.integers(0, 9).flatmap(
    lambda _: st.lists(
        st.lists(st.integers(0, 20), min_size=4, max_size=4), min_size=4, max_size=4
    )
)


def cm_of(rows):
    return ConfusionMatrix(np.array(rows, dtype=np.int64), len(rows))


class TestMcae:
    def test_perfect(self):
        assert mcae([(0.5, 0.5), (0.9, 0.9)]).final == 0.0

    def test_arithmetic_example(self):
        result = mcae([(0.5, 0.6), (0.7, 0.7)])
        assert result.final == pytest.approx(0.05)
        assert result.running.tolist() == pytest.approx([0.1, 0.05])

    def test_running_is_prefix_means(self):
        pairs = [(0.0, 1.0), (0.5, 0.5), (0.2, 0.5)]
        result = mcae(pairs)
        assert result.running[0] == pytest.approx(1.0)
        assert result.running[1] == pytest.approx(0.5)
        assert result.final == pytest.approx((1.0 + 0.0 + 0.3) / 3)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mcae([])

    @given(
        st.lists(
            st.tuples(
                st.floats(0, 1, allow_nan=False), st.floats(0, 1, allow_nan=False)
            ),
            min_size=1,
            max_size=50,
        ),
        st.integers(1, 7),
    )
    @settings(max_examples=40)
    def test_final_independent_of_chunking(self, pairs, n_chunks):
        whole = mcae(pairs).final
        errors = []
        size = max(1, len(pairs) // n_chunks)
        for start in range(0, len(pairs), size):
            errors.extend(abs(a - b) for a, b in pairs[start : start + size])
        assert math.fsum(errors) / len(errors) == whole


class TestConfusion:
    def test_diagonal_example(self):
        cm = confusion([(0.74, 0.75)])
        assert cm.counts[7, 7] == 1

    def test_upper_triangle_example(self):
        cm = confusion([(0.05, 0.95)])
        assert cm.counts[0, 9] == 1

    def test_conservation(self):
        pairs = [(i / 10, (9 - i) / 10) for i in range(10)]
        assert confusion(pairs).total == 10

    def test_out_of_range_estimates_clamp_to_edge_bands(self):
        cm = confusion([(0.5, -0.4), (0.5, 1.3)])
        assert cm.counts[5, 0] == 1
        assert cm.counts[5, 9] == 1


class TestRegions:
    def test_formula_example(self):
        rows = [[0] * 10 for _ in range(10)]
        rows[0][1] = 3
        rows[1][0] = 1
        cm = cm_of(rows)
        r = regions(cm)
        assert (r.upper, r.lower, r.diagonal) == (3, 1, 0)
        assert conservativeness(cm) == 3.0
        assert total_accuracy(cm) == 0.0

    def test_identity_matrix_neutral(self):
        rows = [[0] * 10 for _ in range(10)]
        for i in range(10):
            rows[i][i] = 2
        cm = cm_of(rows)
        assert conservativeness(cm) == 1.0
        assert total_accuracy(cm) == 1.0

    def test_pure_overestimation_is_infinite(self):
        rows = [[0] * 10 for _ in range(10)]
        rows[0][9] = 5
        assert math.isinf(conservativeness(cm_of(rows)))

    def test_empty_total_accuracy_rejected(self):
        with pytest.raises(ValidationError):
            total_accuracy(cm_of([[0] * 10 for _ in range(10)]))

    @given(matrix_st)
    def test_partition(self, rows):
        cm = cm_of(rows)
        r = regions(cm)
        assert r.upper + r.lower + r.diagonal == cm.total

    @given(matrix_st)
    def test_shift_up_monotonicity(self, rows):
        cm = cm_of(rows)
        shifted = np.zeros_like(cm.counts)
        shifted[:, 1:] += cm.counts[:, :-1]
        shifted[:, -1] += cm.counts[:, -1]
        cm2 = ConfusionMatrix(shifted, cm.size)
        assert regions(cm2).upper >= regions(cm).upper
        assert regions(cm2).lower <= regions(cm).lower


class TestPerClass:
    def test_perfect_diagonal(self):
        rows = [[0] * 4 for _ in range(4)]
        for i in range(4):
            rows[i][i] = 3
        for m in per_class(cm_of(rows)):
            assert m.accuracy == 1.0
            assert m.error_rate == 0.0
            assert m.precision == 1.0
            assert m.recall == 1.0
            assert m.f1 == 1.0

    def test_zero_column_precision_undefined(self):
        rows = [[2, 0], [3, 0]]
        metrics = per_class(cm_of(rows))
        assert metrics[1].precision is None
        assert metrics[1].recall == 0.0
        assert metrics[1].f1 == 0.0

    def test_two_by_two_toy(self):
        metrics = per_class(cm_of([[3, 1], [2, 4]]))
        m = metrics[0]
        assert m.precision == pytest.approx(3 / 5)
        assert m.recall == pytest.approx(3 / 4)
        assert m.accuracy == pytest.approx(7 / 10)
        assert m.f1 == pytest.approx(2 / 3)
        assert m.error_rate == pytest.approx(3 / 10)

    def test_f1_undefined_only_when_band_untouched(self):
        rows = [[0, 0], [0, 5]]
        metrics = per_class(cm_of(rows))
        assert metrics[0].f1 is None
        assert metrics[0].precision is None
        assert metrics[0].recall == 0.0
        assert metrics[0].accuracy == 1.0

    @given(matrix_st)
    @settings(max_examples=60)
    def test_algebra(self, rows):
        cm = cm_of(rows)
        if cm.total == 0:
            return
        metrics = per_class(cm)
        tp_sum = sum(int(cm.counts[i, i]) for i in range(cm.size))
        assert total_accuracy(cm) == tp_sum / cm.total
        for i, m in enumerate(metrics):
            column_zero = int(cm.counts[:, i].sum()) == 0
            assert (m.precision is None) == column_zero
            assert m.error_rate == pytest.approx(1.0 - m.accuracy)


class TestPerClassScore:
    def metrics_with(self, accs):
        return [
            ClassMetrics(accuracy=a, error_rate=1 - a, precision=None, recall=0.0, f1=None)
            for a in accs
        ]

    def test_single_winner(self):
        scores = per_class_score(
            {"A": self.metrics_with([0.9]), "B": self.metrics_with([0.8])}
        )
        assert scores["A"]["accuracy"] == 1
        assert scores["B"]["accuracy"] == 0

    def test_tie_scores_both(self):
        scores = per_class_score(
            {"A": self.metrics_with([0.9]), "B": self.metrics_with([0.9])}
        )
        assert scores["A"]["accuracy"] == 1
        assert scores["B"]["accuracy"] == 1

    def test_undefined_never_wins(self):
        a = [ClassMetrics(0.5, 0.5, None, 0.0, None)]
        b = [ClassMetrics(0.4, 0.6, 0.1, 0.2, 0.3)]
        scores = per_class_score({"A": a, "B": b})
        assert scores["A"]["precision"] == 0
        assert scores["B"]["precision"] == 1
        assert scores["A"]["f1"] == 0 and scores["B"]["f1"] == 1

    def test_needs_two_approaches(self):
        with pytest.raises(ValidationError):
            per_class_score({"A": self.metrics_with([0.9])})


class TestEvaluatePairs:
    def test_full_battery(self):
        pairs = [(0.05, 0.05), (0.74, 0.75), (0.9, 0.2)]
        report = evaluate_pairs("toy", pairs)
        assert report.n == 3
        assert report.mcae == pytest.approx((0.0 + 0.01 + 0.7) / 3)
        assert report.total_accuracy == pytest.approx(2 / 3)
        assert regions(report.confusion).lower == 1
        assert len(report.per_class) == 10
        assert len(report.running_mcae) == 3

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            evaluate_pairs("toy", [])
