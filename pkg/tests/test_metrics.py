import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from wattsplit.errors import DataError
from wattsplit.metrics import (classification_accuracy, evaluate_predictions,
                               mae, on_off_states)

from conftest import dataset, series


class TestMae:
    def test_identity(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_fixture(self):
        assert mae([0, 100, 100], [0, 90, 110]) == pytest.approx(20.0 / 3.0)

    def test_zero_prediction_reduces_to_mean(self):
        truth = np.array([5.0, 15.0, 40.0])
        assert mae(truth, np.zeros(3)) == pytest.approx(truth.mean())

    def test_errors(self):
        with pytest.raises(DataError):
            mae([1.0], [1.0, 2.0])
        with pytest.raises(DataError):
            mae([], [])
        with pytest.raises(DataError):
            mae([np.nan], [1.0])

    @given(hnp.arrays(np.float64, st.integers(1, 30),
                      elements=st.floats(0, 1e4)),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_translation_detection(self, x, c):
        assert mae(x, x + c) == pytest.approx(abs(c), abs=1e-9)


class TestOnOffStates:
    def test_basic_thresholding(self):
        np.testing.assert_array_equal(
            on_off_states(np.array([0.0, 5.0, 15.0]), 10.0), [False, False, True])

    def test_zero_threshold_strict(self):
        np.testing.assert_array_equal(
            on_off_states(np.zeros(3), 0.0), [False, False, False])

    def test_exact_threshold_is_off(self):
        np.testing.assert_array_equal(on_off_states(np.array([10.0]), 10.0), [False])

    def test_negative_threshold_rejected(self):
        with pytest.raises(DataError):
            on_off_states(np.array([1.0]), -1.0)


class TestClassificationAccuracy:
    def test_identity(self):
        states = np.array([True, False, True])
        assert classification_accuracy(states, states) == 1.0

    def test_hand_fixture(self):
        truth = [True, True, False, False, True]
        pred = [True, False, False, True, True]
        # TP = 2, TN = 1 over 5 samples
        assert classification_accuracy(truth, pred) == pytest.approx(0.6)

    def test_complement_is_zero(self):
        truth = np.array([True, False, True, True])
        assert classification_accuracy(truth, ~truth) == 0.0

    def test_errors(self):
        with pytest.raises(DataError):
            classification_accuracy([True], [True, False])
        with pytest.raises(DataError):
            classification_accuracy([], [])

    @given(hnp.arrays(np.bool_, st.integers(1, 40)),
           hnp.arrays(np.bool_, st.integers(1, 40)),
           st.randoms())
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariance(self, truth, pred, rnd):
        n = min(truth.size, pred.size)
        truth, pred = truth[:n], pred[:n]
        perm = np.asarray(rnd.sample(range(n), n))
        assert classification_accuracy(truth, pred) == pytest.approx(
            classification_accuracy(truth[perm], pred[perm]))


class TestEvaluatePredictions:
    def test_per_appliance_report(self):
        ds = dataset([100, 100, 0], [[100, 100, 0], [0, 0, 0]])
        preds = [series([100, 90, 0], label="app0"), series([0, 0, 20], label="app1")]
        rep = evaluate_predictions(ds, preds, threshold=10)
        record = rep.to_record()
        assert record["mae.app0"] == pytest.approx(10.0 / 3.0)
        assert record["mae.app1"] == pytest.approx(20.0 / 3.0)
        assert record["accuracy.app0"] == 1.0
        assert record["accuracy.app1"] == pytest.approx(2.0 / 3.0)
        assert rep.mae_overall == pytest.approx(5.0)
        assert rep.n_samples == 3

    def test_missing_prediction(self):
        ds = dataset([1, 2], [[1, 2]])
        with pytest.raises(DataError, match="missing prediction"):
            evaluate_predictions(ds, [], threshold=10)
