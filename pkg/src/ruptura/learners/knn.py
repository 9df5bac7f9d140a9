"""Brute-force k-nearest-neighbours regression over target vectors."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger("ruptura.learners.knn")


class KNNRegressor:
    """Mean target vector of the ``k`` nearest training rows (Euclidean).

    Equal distances are ordered by the training row's region_id, so predictions do not depend
    on row order.
    """

    def __init__(self, k: int = 5):
        self.k = int(k)
        self.X_train = np.empty((0, 0))
        self.Y_train = np.empty((0, 0))
        self._rank = np.empty(0, dtype=np.int64)

    def fit(
        self, X: np.ndarray, Y: np.ndarray, row_ids: Optional[Sequence[str]] = None
    ) -> KNNRegressor:
        self.X_train = np.asarray(X, dtype=np.float64)
        self.Y_train = np.asarray(Y, dtype=np.float64)
        n = self.X_train.shape[0]
        if row_ids is None:
            row_ids = [f"{i:012d}" for i in range(n)]
        order = sorted(range(n), key=lambda i: row_ids[i])
        self._rank = np.empty(n, dtype=np.int64)
        self._rank[order] = np.arange(n)
        if self.k > n:
            logger.warning("k=%d exceeds %d training rows; using k=%d", self.k, n, n)
            self.k = n
        return self

    def neighbours(self, x: np.ndarray) -> np.ndarray:
        """Indices of the ``k`` nearest training rows, nearest first."""
        distances = np.sum((self.X_train - x) ** 2, axis=1)
        return np.lexsort((self._rank, distances))[: self.k]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.array([self.Y_train[self.neighbours(x)].mean(axis=0) for x in X])

    def __repr__(self) -> str:
        return f"KNNRegressor(k={self.k})"
