import numpy as np
import pytest

import oracles
from fedlgt import metrics as mt


class TestConfusionCounts:
    def test_exactly_half_counts_as_absent(self):
        counts = mt.confusion_counts([[0.5, 0.51]], [[1, 1]])
        np.testing.assert_array_equal(counts.predicted, [0, 1])

    def test_perfect_predictor(self):
        y = np.array([[1, 0], [0, 1], [1, 1]])
        probs = np.where(y == 1, 0.9, 0.1)
        counts = mt.confusion_counts(probs, y)
        np.testing.assert_array_equal(counts.correct, counts.predicted)
        np.testing.assert_array_equal(counts.correct, counts.actual)

    def test_all_zero_probs_predict_nothing(self):
        counts = mt.confusion_counts(np.zeros((4, 3)), np.ones((4, 3), dtype=int))
        np.testing.assert_array_equal(counts.predicted, [0, 0, 0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            mt.confusion_counts(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_invariant_correct_bounded(self):
        with pytest.raises(ValueError, match="exceed"):
            mt.ConfusionCounts(correct=[3], predicted=[2], actual=[5])


class TestPRF1:
    def test_hand_derived_two_class_example(self):
        # targets c1=[1,1,0], c2=[0,1,1]; preds c1=[1,0,0], c2=[1,1,1]
        probs = [[0.9, 0.9], [0.1, 0.9], [0.1, 0.9]]
        targets = [[1, 0], [1, 1], [0, 1]]
        c_p, c_r, c_f1, o_p, o_r, o_f1 = mt.prf1(mt.confusion_counts(probs, targets))
        assert round(c_p, 4) == 0.8333
        assert round(c_r, 4) == 0.75
        assert round(c_f1, 4) == 0.7895
        assert round(o_p, 4) == 0.75
        assert round(o_r, 4) == 0.75
        assert round(o_f1, 4) == 0.75

    def test_perfect_predictions_score_one(self):
        y = np.array([[1, 0, 1], [0, 1, 1]])
        probs = np.where(y == 1, 0.99, 0.01)
        report = mt.evaluate(probs, y)
        assert report.values() == (1.0,) * 8

    def test_no_predictions_gives_zeros(self):
        vals = mt.prf1(mt.confusion_counts(np.zeros((3, 2)), np.ones((3, 2), dtype=int)))
        assert vals == (0.0,) * 6

    def test_never_nan_on_degenerate_inputs(self):
        vals = mt.prf1(mt.confusion_counts(np.zeros((2, 2)), np.zeros((2, 2), dtype=int)))
        assert all(v == 0.0 for v in vals)


class TestAveragePrecision:
    def test_three_sample_example(self):
        c_ap, o_ap = mt.average_precision([[0.9], [0.8], [0.1]], [[1], [0], [1]])
        assert abs(c_ap - (1.0 + 2.0 / 3.0) / 2.0) < 1e-15
        assert c_ap == o_ap

    def test_all_positives_ranked_first_is_one(self):
        c_ap, o_ap = mt.average_precision([[0.9], [0.8], [0.1]], [[1], [1], [0]])
        assert c_ap == 1.0 and o_ap == 1.0

    def test_single_positive_sample_is_one(self):
        c_ap, o_ap = mt.average_precision([[0.42]], [[1]])
        assert c_ap == 1.0 and o_ap == 1.0

    def test_empty_positive_classes_excluded_from_c_ap(self):
        scores = [[0.9, 0.2], [0.3, 0.8]]
        targets = [[1, 0], [0, 0]]
        c_ap, _ = mt.average_precision(scores, targets)
        assert c_ap == 1.0  # only the first class counts

    def test_no_positives_anywhere_is_an_error(self):
        with pytest.raises(ValueError, match="positive"):
            mt.average_precision([[0.5]], [[0]])

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(0, 1, size=(8, 4))
        targets = rng.integers(0, 2, size=(8, 4))
        targets[0] = 1  # ensure at least one positive
        before = mt.average_precision(scores, targets)
        after = mt.average_precision(np.exp(3.0 * scores) + 5.0, targets)
        assert before == after

    def test_tie_break_by_ascending_sample_index(self):
        # equal scores: earlier sample ranks first
        c_ap, _ = mt.average_precision([[0.5], [0.5]], [[0], [1]])
        assert c_ap == 0.5


class TestOracleAgreement:
    def test_exact_match_on_100_random_instances(self):
        rng = np.random.default_rng(123)
        checked = 0
        while checked < 100:
            n = int(rng.integers(1, 11))
            c = int(rng.integers(1, 6))
            probs = rng.uniform(0, 1, size=(n, c))
            targets = rng.integers(0, 2, size=(n, c))
            if not (targets == 1).any():
                continue
            checked += 1
            counts = mt.confusion_counts(probs, targets)
            o_mc, o_mp, o_mg = oracles.counts(probs.tolist(), targets.tolist())
            assert counts.correct.tolist() == o_mc
            assert counts.predicted.tolist() == o_mp
            assert counts.actual.tolist() == o_mg
            assert mt.prf1(counts) == oracles.prf1(o_mc, o_mp, o_mg)
            assert mt.average_precision(probs, targets) == oracles.average_precision(
                probs.tolist(), targets.tolist()
            )

    def test_f1_harmonic_identity_holds_exactly(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            probs = rng.uniform(0, 1, size=(6, 4))
            targets = rng.integers(0, 2, size=(6, 4))
            c_p, c_r, c_f1, o_p, o_r, o_f1 = mt.prf1(mt.confusion_counts(probs, targets))
            expected_c = 2 * c_p * c_r / (c_p + c_r) if c_p + c_r > 0 else 0.0
            expected_o = 2 * o_p * o_r / (o_p + o_r) if o_p + o_r > 0 else 0.0
            assert c_f1 == expected_c
            assert o_f1 == expected_o


class TestReport:
    def test_metric_order_matches_table_layout(self):
        assert mt.METRIC_ORDER == ("c_ap", "c_p", "c_r", "c_f1", "o_ap", "o_p", "o_r", "o_f1")

    def test_scaled_and_formatted(self):
        report = mt.MetricsReport(0.5, 0.25, 0.125, 0.1, 1.0, 0.0, 0.75, 0.375)
        assert report.scaled()[0] == 50.0
        row = report.format_row()
        assert row.startswith("c_ap=50.00")
        assert "o_f1=37.50" in row
