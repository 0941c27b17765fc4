import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from datamarket.core import FeatureMatrix, InputError, NumericalError, PredictionTask
from datamarket.prediction import (
    DegenerateRangeError,
    GainSpec,
    PredictorSpec,
    fit_predict,
    gain,
)

RMSE = GainSpec("one_minus_rmse")
ACC = GainSpec("normalized_accuracy")


def test_perfectly_predictive_feature(rng):
    y = rng.standard_normal(50)
    task = PredictionTask.split(y)
    pred = fit_predict(PredictorSpec(ridge_lambda=1e-12), FeatureMatrix(y[None, :]), task)
    assert np.max(np.abs(pred - task.y_test)) < 1e-6


def test_empty_features_predict_train_mean():
    task = PredictionTask([1.0, 3.0], [5.0, 7.0, 9.0], [0, 1], [2, 3, 4])
    pred = fit_predict(PredictorSpec(), FeatureMatrix(np.empty((0, 5))), task)
    np.testing.assert_array_equal(pred, [2.0, 2.0, 2.0])


def test_ridge_matches_closed_form_oracle():
    # expected values from the centred normal equations solved by hand:
    # coefficients (38/39, 32/39), intercept absorbed by the train means
    Z = np.array([[1.0, 2.0, 0.0, 3.0, 1.0, 2.0], [0.0, 1.0, 1.0, 2.0, 3.0, 1.0]])
    y = np.array([1.0, 3.0, 1.0, 5.0, 3.0, 4.0])
    task = PredictionTask(y[:4], y[4:], range(4), [4, 5])
    pred = fit_predict(PredictorSpec(ridge_lambda=0.5), FeatureMatrix(Z), task)
    np.testing.assert_allclose(pred, [2.5 + 45 / 39, 2.5 + 19 / 39], rtol=0, atol=1e-12)


def test_singular_design_without_ridge():
    Z = np.array([[1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 4.0, 6.0, 8.0, 10.0]])
    task = PredictionTask([1.0, 2.0, 3.0], [4.0, 5.0], [0, 1, 2], [3, 4])
    with pytest.raises(NumericalError):
        fit_predict(PredictorSpec(ridge_lambda=0.0), FeatureMatrix(Z), task)


def test_dimension_mismatch():
    task = PredictionTask.split(np.arange(10.0))
    with pytest.raises(InputError):
        fit_predict(PredictorSpec(), FeatureMatrix(np.zeros((2, 5))), task)


def test_duplicate_rows_do_not_change_predictions(market):
    X, task = market
    doubled = FeatureMatrix(np.vstack([X.values, X.values[:2]]))
    for spec in (PredictorSpec(ridge_lambda=0.3), PredictorSpec("k_nearest_neighbor", k=3)):
        np.testing.assert_allclose(
            fit_predict(spec, doubled, task), fit_predict(spec, X, task), atol=1e-9, rtol=0
        )


def test_fit_predict_is_deterministic(market):
    X, task = market
    spec = PredictorSpec()
    np.testing.assert_array_equal(fit_predict(spec, X, task), fit_predict(spec, X, task))


def test_knn_averages_nearest_train_columns():
    X = FeatureMatrix([[0.0, 1.0, 10.0, 11.0, 0.4, 10.6]])
    task = PredictionTask([1.0, 2.0, 7.0, 9.0], [0.0, 0.0], range(4), [4, 5])
    pred = fit_predict(PredictorSpec("k_nearest_neighbor", k=2), X, task)
    np.testing.assert_allclose(pred, [1.5, 8.0])


def test_predictor_spec_validation():
    with pytest.raises(InputError):
        PredictorSpec(ridge_lambda=-1.0)
    with pytest.raises(InputError):
        PredictorSpec(k=0)
    with pytest.raises(ValueError):
        PredictorSpec(kind="neural_net")


def test_gain_examples():
    assert gain(RMSE, [0.0, 2.0, 5.0], [0.0, 2.0, 5.0]) == 1.0
    # RMSE = (1/2) sqrt((1 + 1) / 2) = 0.5
    assert gain(RMSE, [0.0, 2.0], [1.0, 1.0]) == pytest.approx(0.5, abs=1e-15)


def test_gain_is_clamped_for_terrible_predictions():
    assert gain(RMSE, [0.0, 1.0], [100.0, -100.0]) == 0.0


def test_normalized_accuracy():
    y = np.array([0, 1, 0, 1.0])
    assert gain(ACC, y, [0, 1, 1, 0.0]) == 0.0
    assert gain(ACC, y, y) == 1.0
    assert gain(ACC, y, [0, 1, 0, 0.0]) == pytest.approx(0.5)
    assert gain(ACC, y, 1 - y) == 0.0


def test_gain_errors():
    with pytest.raises(DegenerateRangeError):
        gain(RMSE, [1.0, 1.0], [1.0, 2.0])
    with pytest.raises(InputError):
        gain(RMSE, [1.0, 2.0], [1.0])


@settings(max_examples=200)
@given(st.integers(1, 20).flatmap(
    lambda n: st.tuples(
        arrays(float, n, elements=st.floats(-1e6, 1e6)),
        arrays(float, n, elements=st.floats(-1e6, 1e6)),
    )
))
def test_gain_in_unit_interval(pair):
    y, y_hat = pair
    for spec in (RMSE, ACC):
        try:
            g = gain(spec, y, y_hat)
        except DegenerateRangeError:
            continue
        assert 0.0 <= g <= 1.0
