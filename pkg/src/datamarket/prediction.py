"""The marketplace's learning algorithm and the gain function scoring its predictions.

Features are rows and time steps are columns, so a regression "sample" is a
column of the feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import FeatureMatrix, InputError, NumericalError, PredictionTask


class PredictorKind(str, Enum):
    RIDGE = "ridge_regression"
    KNN = "k_nearest_neighbor"


class GainKind(str, Enum):
    ONE_MINUS_RMSE = "one_minus_rmse"
    NORMALIZED_ACCURACY = "normalized_accuracy"


class DegenerateRangeError(InputError):
    """RMSE normalization needs max(y) > min(y)."""


@dataclass(frozen=True)
class PredictorSpec:
    kind: PredictorKind = PredictorKind.RIDGE
    ridge_lambda: float = 1e-6
    k: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", PredictorKind(self.kind))
        if not self.ridge_lambda >= 0:
            raise InputError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if int(self.k) != self.k or self.k < 1:
            raise InputError(f"k must be a positive integer, got {self.k}")


@dataclass(frozen=True)
class GainSpec:
    kind: GainKind = GainKind.ONE_MINUS_RMSE

    def __post_init__(self):
        object.__setattr__(self, "kind", GainKind(self.kind))


def unique_rows(values: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of every distinct row, in original order."""
    seen = set()
    keep = []
    for i, row in enumerate(values):
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return np.asarray(keep, dtype=np.intp)


def _ridge(Z_train, y_train, Z_test, lam):
    x_mean = Z_train.mean(axis=1, keepdims=True)
    y_mean = y_train.mean()
    Zc = Z_train - x_mean
    A = Zc @ Zc.T
    if lam > 0:
        A[np.diag_indices_from(A)] += lam
    elif np.linalg.matrix_rank(A) < A.shape[0]:
        raise NumericalError("singular normal equations; use ridge_lambda > 0")
    try:
        coef = np.linalg.solve(A, Zc @ (y_train - y_mean))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ridge solve failed: {exc}") from exc
    return (Z_test - x_mean).T @ coef + y_mean


def _knn(Z_train, y_train, Z_test, k):
    k = min(k, Z_train.shape[1])
    # squared distances between test columns and train columns
    d2 = (
        (Z_test**2).sum(axis=0)[:, None]
        + (Z_train**2).sum(axis=0)[None, :]
        - 2.0 * Z_test.T @ Z_train
    )
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return y_train[nearest].mean(axis=1)


def fit_predict(spec: PredictorSpec, X: FeatureMatrix, task: PredictionTask) -> np.ndarray:
    """Fit on the task's train columns and predict its test columns.

    Exact duplicate feature rows are collapsed before fitting, so copying a
    seller's data cannot change the prediction. With no features the
    prediction is the train mean.
    """
    if task.max_column >= X.n_steps:
        raise InputError(f"task references column {task.max_column} but X has {X.n_steps} columns")
    n_test = len(task.test_columns)
    if len(task.y_train) == 0:
        raise InputError("cannot fit without training labels")
    baseline = float(task.y_train.mean())
    if X.n_sellers == 0:
        return np.full(n_test, baseline)

    values = X.values
    keep = unique_rows(values)
    if len(keep) < len(values):
        values = values[keep]
    Z_train = values[:, task.train_columns]
    Z_test = values[:, task.test_columns]

    if spec.kind is PredictorKind.RIDGE:
        return _ridge(Z_train, task.y_train, Z_test, spec.ridge_lambda)
    return _knn(Z_train, task.y_train, Z_test, spec.k)


class SubsetPredictor:
    """Predictions for many feature subsets of one matrix and task.

    For ridge the centred Gram matrix is built once, so each subset costs a
    solve of its own |S| x |S| block; this equals a fresh fit on the subset
    because centring is per feature row. Duplicate rows are collapsed as in
    ``fit_predict``. Other predictors refit on every call.
    """

    def __init__(self, spec: PredictorSpec, X: FeatureMatrix, task: PredictionTask):
        if task.max_column >= X.n_steps:
            raise InputError(
                f"task references column {task.max_column} but X has {X.n_steps} columns"
            )
        if len(task.y_train) == 0:
            raise InputError("cannot fit without training labels")
        self.spec, self.X, self.task = spec, X, task
        self.baseline = float(task.y_train.mean())
        first = {}
        self.row_class = np.array(
            [first.setdefault(row.tobytes(), i) for i, row in enumerate(X.values)], dtype=np.intp
        )
        if spec.kind is PredictorKind.RIDGE and X.n_sellers:
            Z_train = X.values[:, task.train_columns]
            x_mean = Z_train.mean(axis=1, keepdims=True)
            Zc = Z_train - x_mean
            self._gram = Zc @ Zc.T
            self._rhs = Zc @ (task.y_train - self.baseline)
            self._test = (X.values[:, task.test_columns] - x_mean).T

    def __call__(self, subset) -> np.ndarray:
        idx = np.unique(self.row_class[np.asarray(list(subset), dtype=np.intp)])
        if len(idx) == 0:
            return np.full(len(self.task.test_columns), self.baseline)
        if self.spec.kind is not PredictorKind.RIDGE:
            return fit_predict(self.spec, FeatureMatrix(self.X.values[idx]), self.task)
        A = self._gram[np.ix_(idx, idx)]
        lam = self.spec.ridge_lambda
        if lam > 0:
            A[np.diag_indices_from(A)] += lam
        elif np.linalg.matrix_rank(A) < len(idx):
            raise NumericalError("singular normal equations; use ridge_lambda > 0")
        try:
            coef = np.linalg.solve(A, self._rhs[idx])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"ridge solve failed: {exc}") from exc
        return self._test[:, idx] @ coef + self.baseline


def gain(spec: GainSpec, y_test, y_hat) -> float:
    """Prediction quality in [0, 1]; larger is better."""
    y_test = np.asarray(y_test, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y_test.shape != y_hat.shape or y_test.ndim != 1 or len(y_test) == 0:
        raise InputError(f"shape mismatch: {y_test.shape} vs {y_hat.shape}")

    if spec.kind is GainKind.ONE_MINUS_RMSE:
        span = y_test.max() - y_test.min()
        if not span > 0:
            raise DegenerateRangeError("y_test is constant; normalized RMSE undefined")
        rmse = np.sqrt(np.mean((y_hat - y_test) ** 2)) / span
        value = 1.0 - rmse
    else:
        acc = float(np.mean(y_hat == y_test))
        value = max(0.0, acc - 0.5) / 0.5
    return float(min(1.0, max(0.0, value)))


def snap_to_labels(y_hat, labels) -> np.ndarray:
    """Replace each prediction by the nearest label (ties go to the smaller label)."""
    classes = np.unique(np.asarray(labels, dtype=float))
    y_hat = np.asarray(y_hat, dtype=float)
    pos = np.clip(np.searchsorted(classes, y_hat), 1, max(len(classes) - 1, 1))
    if len(classes) == 1:
        return np.full(y_hat.shape, classes[0])
    lower, upper = classes[pos - 1], classes[pos]
    return np.where(y_hat - lower <= upper - y_hat, lower, upper)


def score(gain_spec: GainSpec, task: PredictionTask, y_hat) -> float:
    """Gain of raw predictions; for accuracy they are first rounded to the train labels."""
    if gain_spec.kind is GainKind.NORMALIZED_ACCURACY:
        y_hat = snap_to_labels(y_hat, task.y_train)
    return gain(gain_spec, task.y_test, y_hat)


def coalition_gain(
    predictor: PredictorSpec, gain_spec: GainSpec, X: FeatureMatrix, task: PredictionTask
) -> float:
    return score(gain_spec, task, fit_predict(predictor, X, task))
