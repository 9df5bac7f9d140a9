"""Closed-form multi-output ridge regression."""
from __future__ import annotations

import numpy as np

from ruptura.exceptions import DegenerateFitError


class RidgeRegressor:
    """Ridge with an unpenalised intercept, solved jointly for every target column.

    ``W = (Xc^T Xc + alpha I)^-1 Xc^T Yc`` on column-centred ``X`` and ``Y``; the intercept
    restores the means.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = float(alpha)
        self.coef_: np.ndarray = np.empty((0, 0))
        self.intercept_: np.ndarray = np.empty(0)

    def fit(self, X: np.ndarray, Y: np.ndarray) -> RidgeRegressor:
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        x_mean = X.mean(axis=0)
        y_mean = Y.mean(axis=0)
        Xc = X - x_mean
        Yc = Y - y_mean
        gram = Xc.T @ Xc + self.alpha * np.eye(X.shape[1])
        try:
            self.coef_ = np.linalg.solve(gram, Xc.T @ Yc)
        except np.linalg.LinAlgError as exc:
            raise DegenerateFitError(f"Ridge system is singular (alpha={self.alpha})") from exc
        self.intercept_ = y_mean - x_mean @ self.coef_
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_

    def __repr__(self) -> str:
        return f"RidgeRegressor(alpha={self.alpha})"
