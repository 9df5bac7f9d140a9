"""Random forest and extra-trees ensembles (scikit-learn) for joint (delta0, delta1) regression."""
from __future__ import annotations

import math
from typing import Any, Optional, Sequence, Union

import numpy as np
from sklearn.ensemble import ExtraTreesRegressor, RandomForestRegressor

MaxFeatures = Union[None, int, float, str]


def resolve_max_features(value: MaxFeatures, n_features: int) -> Any:
    """``"third"`` -> ceil(d / 3); ``None`` or ``"all"`` -> every feature; otherwise as sklearn."""
    if value == "third":
        return max(1, math.ceil(n_features / 3))
    if value == "all":
        return None
    if isinstance(value, int):
        return min(value, n_features)
    return value


class ForestRegressor:
    """Wraps scikit-learn's forests.

    Multi-output squared-error splits sum the variance reduction over both targets. Rows are
    put in region_id order before fitting, so a fixed seed gives the same forest whatever order
    the caller passes rows in.
    """

    def __init__(
        self,
        family: str,
        *,
        n_estimators: int = 500,
        max_depth: Optional[int] = None,
        max_features: MaxFeatures = "third",
        bootstrap: Optional[bool] = None,
        seed: int = 0,
        threads: int = 1,
    ):
        if family not in ("random_forest", "extra_trees"):
            raise ValueError(f"unknown forest family {family!r}")
        self.family = family
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = (family == "random_forest") if bootstrap is None else bootstrap
        self.seed = seed
        self.threads = threads
        self.estimator_: Any = None

    def fit(
        self, X: np.ndarray, Y: np.ndarray, row_ids: Optional[Sequence[str]] = None
    ) -> ForestRegressor:
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if row_ids is not None:
            order = np.argsort(np.asarray(row_ids, dtype=object), kind="stable")
            X, Y = X[order], Y[order]
        cls = RandomForestRegressor if self.family == "random_forest" else ExtraTreesRegressor
        self.estimator_ = cls(
            n_estimators=self.n_estimators,
            criterion="squared_error",
            max_depth=self.max_depth,
            max_features=resolve_max_features(self.max_features, X.shape[1]),
            bootstrap=self.bootstrap,
            random_state=self.seed,
            n_jobs=self.threads,
        )
        self.estimator_.fit(X, Y)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        pred = self.estimator_.predict(np.asarray(X, dtype=np.float64))
        return pred.reshape(len(X), -1)

    def __repr__(self) -> str:
        return (
            f"ForestRegressor(family={self.family!r}, n_estimators={self.n_estimators}, "
            f"max_depth={self.max_depth})"
        )
