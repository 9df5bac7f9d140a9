"""Multi-output learners predicting (delta0, delta1), baselines, and model persistence."""
from __future__ import annotations

import logging
import numbers
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import joblib
import numpy as np
from sklearn.preprocessing import StandardScaler

from ruptura._utils import PathLike
from ruptura.exceptions import (
    ConfigError,
    DimensionError,
    EstimationError,
    LayoutError,
    ValidationError,
)
from ruptura.feature_builder import Dataset, FeatureSetSpec
from ruptura.learners.baselines import ForecastBaseline, MeanBaseline, NoChangeBaseline
from ruptura.learners.ffn import FeedForwardNet
from ruptura.learners.knn import KNNRegressor
from ruptura.learners.ridge import RidgeRegressor
from ruptura.learners.trees import ForestRegressor
from ruptura.rdd_estimator import EpisodeWindow, WindowConfig

logger = logging.getLogger("ruptura.learners")

MODEL_FORMAT_VERSION = 1

FAMILIES = (
    "ridge",
    "knn",
    "random_forest",
    "extra_trees",
    "ffn",
    "baseline_no_change",
    "baseline_mean",
    "baseline_forecast",
)
BASELINES = ("baseline_no_change", "baseline_mean", "baseline_forecast")

DEFAULT_HYPERPARAMETERS: Dict[str, Dict[str, Any]] = {
    "ridge": {"alpha": 1.0},
    "knn": {"k": 5},
    "random_forest": {
        "n_estimators": 500,
        "max_depth": None,
        "max_features": "third",
        "bootstrap": True,
    },
    "extra_trees": {
        "n_estimators": 500,
        "max_depth": 10,
        "max_features": "third",
        "bootstrap": False,
    },
    "ffn": {"epochs": 150, "lr": 0.005, "layers": 2, "width": 2, "batch_size": 64},
    "baseline_no_change": {},
    "baseline_mean": {},
    "baseline_forecast": {"max_order": 3},
}

# defaults that change when both the covariate and embedding blocks are used
RICH_FEATURE_OVERRIDES: Dict[str, Dict[str, Any]] = {
    "ridge": {"alpha": 10.0},
    "random_forest": {"n_estimators": 1000},
    "extra_trees": {"max_depth": None},
}

# fixed grids enumerated by select_on_dev
DEFAULT_GRIDS: Dict[str, List[Dict[str, Any]]] = {
    "ridge": [{"alpha": a} for a in (0.1, 1.0, 10.0, 100.0)],
    "knn": [{"k": k} for k in (1, 3, 5, 10, 20)],
    "random_forest": [{"n_estimators": 200, "max_depth": d} for d in (5, 10, None)],
    "extra_trees": [{"n_estimators": 200, "max_depth": d} for d in (5, 10, None)],
    "ffn": [{"layers": n, "width": w} for n in (1, 2) for w in (2, 8)],
}


def default_hyperparameters(family: str, *, rich: bool = False) -> Dict[str, Any]:
    """Defaults for ``family``; ``rich`` selects the settings used with cov + exog features."""
    if family not in DEFAULT_HYPERPARAMETERS:
        raise ConfigError(
            f"Unknown model family {family!r}; expected one of {FAMILIES}", field="family"
        )
    params = dict(DEFAULT_HYPERPARAMETERS[family])
    if rich:
        params.update(RICH_FEATURE_OVERRIDES.get(family, {}))
    return params


def _is_int(value: Any) -> bool:
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _require(condition: bool, family: str, name: str, rule: str, value: Any) -> None:
    if not condition:
        raise ConfigError(
            f"Invalid hyperparameter {family}.{name}={value!r}: must be {rule}",
            field=name,
        )


def validate_hyperparameters(family: str, params: Mapping[str, Any]) -> None:
    """Raise ConfigError naming the first unknown or out-of-range hyperparameter."""
    known = DEFAULT_HYPERPARAMETERS[family]
    for name in params:
        if name not in known:
            raise ConfigError(f"Unknown hyperparameter {family}.{name}", field=name)
    p = params
    if family == "ridge":
        _require(_is_number(p["alpha"]) and p["alpha"] > 0, family, "alpha", "> 0", p["alpha"])
    elif family == "knn":
        _require(_is_int(p["k"]) and p["k"] >= 1, family, "k", "an integer >= 1", p["k"])
    elif family in ("random_forest", "extra_trees"):
        n = p["n_estimators"]
        _require(_is_int(n) and n >= 1, family, "n_estimators", "an integer >= 1", n)
        depth = p["max_depth"]
        _require(
            depth is None or (_is_int(depth) and depth >= 1),
            family,
            "max_depth",
            "null or an integer >= 1",
            depth,
        )
        mf = p["max_features"]
        _require(
            mf in (None, "third", "sqrt", "log2", "all")
            or (_is_int(mf) and mf >= 1)
            or (_is_number(mf) and 0 < mf <= 1),
            family,
            "max_features",
            "null, 'third', 'sqrt', 'log2', 'all', an integer >= 1 or a fraction in (0, 1]",
            mf,
        )
        _require(isinstance(p["bootstrap"], bool), family, "bootstrap", "a boolean", p["bootstrap"])
    elif family == "ffn":
        for name in ("epochs", "layers", "width", "batch_size"):
            _require(_is_int(p[name]) and p[name] >= 1, family, name, "an integer >= 1", p[name])
        _require(_is_number(p["lr"]) and p["lr"] > 0, family, "lr", "> 0", p["lr"])
    elif family == "baseline_forecast":
        mo = p["max_order"]
        _require(_is_int(mo) and 0 <= mo <= 3, family, "max_order", "an integer in 0..3", mo)


@dataclass(frozen=True)
class ModelSpec:
    """Learner family, its hyperparameters (merged over the defaults) and seed.

    Attributes:
        family: One of :data:`FAMILIES`.
        hyperparameters: Overrides; missing keys take the family defaults.
        seed: Seed for every random choice the learner makes.
        per_target: Fit one model per target column instead of a joint multi-output model.
        rich: Start from the cov + exog defaults instead of the plain ones.
        overrides: The hyperparameters given explicitly, before the defaults were merged in.
    """

    family: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    per_target: bool = False
    rich: bool = False
    overrides: Mapping[str, Any] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "overrides", dict(self.hyperparameters))
        merged = default_hyperparameters(self.family, rich=self.rich)
        merged.update(self.hyperparameters)
        validate_hyperparameters(self.family, merged)
        object.__setattr__(self, "hyperparameters", merged)

    @classmethod
    def for_features(
        cls, family: str, features: FeatureSetSpec, seed: int = 0, **overrides: Any
    ) -> ModelSpec:
        """Spec whose defaults follow the feature set (cov + exog selects the rich defaults)."""
        return cls(family, overrides, seed=seed, rich=features.use_cov and features.use_exog)

    @property
    def is_baseline(self) -> bool:
        return self.family in BASELINES

    def with_hyperparameters(self, **overrides: Any) -> ModelSpec:
        merged = dict(self.hyperparameters)
        merged.update(overrides)
        return ModelSpec(self.family, merged, self.seed, self.per_target, self.rich)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "hyperparameters": dict(self.hyperparameters),
            "seed": self.seed,
            "per_target": self.per_target,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        return cls(
            family=data.get("family", ""),
            hyperparameters=data.get("hyperparameters", {}),
            seed=data.get("seed", 0),
            per_target=data.get("per_target", False),
            rich=data.get("rich", False),
        )

    def __repr__(self) -> str:
        return f"ModelSpec(family={self.family!r}, hyperparameters={dict(self.hyperparameters)})"


@dataclass
class TrainedModel:
    """A fitted learner plus what it needs to refuse incompatible inputs.

    ``estimators`` holds one joint estimator, or one per target when ``spec.per_target``.
    """

    spec: ModelSpec
    fingerprint: str
    n_features: int
    config: WindowConfig
    scaler: Optional[StandardScaler]
    estimators: List[Any]
    split: Optional[Dict[str, Any]] = None

    @property
    def feature_means(self) -> Optional[np.ndarray]:
        return None if self.scaler is None else self.scaler.mean_

    @property
    def feature_stds(self) -> Optional[np.ndarray]:
        return None if self.scaler is None else self.scaler.scale_

    def __repr__(self) -> str:
        return (
            f"TrainedModel(family={self.spec.family!r}, n_features={self.n_features}, "
            f"fingerprint={self.fingerprint!r})"
        )


def _fit_estimator(
    spec: ModelSpec, X: np.ndarray, Y: np.ndarray, region_ids: Sequence[str], threads: int
) -> Any:
    hp = spec.hyperparameters
    family = spec.family
    if family == "ridge":
        return RidgeRegressor(hp["alpha"]).fit(X, Y)
    if family == "knn":
        return KNNRegressor(hp["k"]).fit(X, Y, region_ids)
    if family in ("random_forest", "extra_trees"):
        return ForestRegressor(
            family,
            n_estimators=hp["n_estimators"],
            max_depth=hp["max_depth"],
            max_features=hp["max_features"],
            bootstrap=hp["bootstrap"],
            seed=spec.seed,
            threads=threads,
        ).fit(X, Y, region_ids)
    if family == "ffn":
        # rows in region_id order keep mini-batches independent of input order
        order = np.argsort(np.asarray(region_ids, dtype=object), kind="stable")
        net = FeedForwardNet(
            X.shape[1], Y.shape[1], layers=hp["layers"], width=hp["width"], seed=spec.seed
        )
        return net.fit(
            X[order],
            Y[order],
            epochs=hp["epochs"],
            lr=hp["lr"],
            batch_size=hp["batch_size"],
            seed=spec.seed,
        )
    if family == "baseline_mean":
        return MeanBaseline().fit(Y)
    if family == "baseline_no_change":
        return NoChangeBaseline()
    return ForecastBaseline(hp["max_order"])


def train(
    spec: ModelSpec,
    dataset: Dataset,
    *,
    threads: int = 1,
    split: Optional[Mapping[str, Any]] = None,
) -> TrainedModel:
    """Fit ``spec`` on every row of ``dataset``.

    Learners see columns standardised with the training rows' means and standard deviations;
    the scaler travels with the model.

    Raises:
        EstimationError: The dataset has no rows.
        DimensionError: The dataset has no feature columns.
    """
    if len(dataset) == 0:
        raise EstimationError("Cannot train on an empty dataset")
    if dataset.n_features < 1:
        raise DimensionError("Dataset has no feature columns", expected=1, got=0)
    scaler: Optional[StandardScaler] = None
    X = dataset.X
    if not spec.is_baseline:
        scaler = StandardScaler().fit(X)
        X = scaler.transform(X)
    Y = dataset.targets
    if spec.per_target:
        estimators = [
            _fit_estimator(spec, X, Y[:, [j]], dataset.region_ids, threads)
            for j in range(Y.shape[1])
        ]
    else:
        estimators = [_fit_estimator(spec, X, Y, dataset.region_ids, threads)]
    logger.info(
        "Trained %s on %d rows x %d features", spec.family, len(dataset), dataset.n_features
    )
    return TrainedModel(
        spec=spec,
        fingerprint=dataset.fingerprint,
        n_features=dataset.n_features,
        config=dataset.config,
        scaler=scaler,
        estimators=estimators,
        split=dict(split) if split else None,
    )


def _predict_one(
    estimator: Any,
    model: TrainedModel,
    X: np.ndarray,
    windows: Optional[Sequence[EpisodeWindow]],
) -> np.ndarray:
    if isinstance(estimator, (NoChangeBaseline, MeanBaseline)):
        out = estimator.predict(X.shape[0])
    elif isinstance(estimator, ForecastBaseline):
        if windows is None or len(windows) != X.shape[0]:
            raise ValidationError(
                "baseline_forecast needs one episode window per row", field="windows"
            )
        out = estimator.predict(windows, model.config)
    else:
        out = estimator.predict(X)
    return np.asarray(out, dtype=np.float64).reshape(X.shape[0], -1)


def predict(
    model: TrainedModel,
    data: Union[Dataset, np.ndarray],
    *,
    fingerprint: Optional[str] = None,
    windows: Optional[Sequence[EpisodeWindow]] = None,
) -> np.ndarray:
    """``(n, 2)`` predictions with columns (delta0, delta1).

    ``data`` is a :class:`Dataset` (its layout fingerprint is checked) or a bare matrix, in which
    case ``fingerprint`` is checked when given and the column count always is.

    Raises:
        LayoutError: The input layout differs from the training layout.
        EstimationError: A prediction is not finite.
    """
    if isinstance(data, Dataset):
        X = data.X
        fingerprint = data.fingerprint
        windows = data.windows if windows is None else windows
    else:
        X = np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
    if fingerprint is not None and fingerprint != model.fingerprint:
        raise LayoutError(expected=model.fingerprint, got=fingerprint)
    if X.shape[1] != model.n_features:
        raise LayoutError(expected=f"{model.n_features} columns", got=f"{X.shape[1]} columns")
    if model.scaler is not None:
        X = model.scaler.transform(X)
    parts = [_predict_one(est, model, X, windows) for est in model.estimators]
    if model.spec.per_target:
        # Window-driven baselines emit both targets; estimator j owns column j.
        parts = [p[:, [j]] if p.shape[1] > 1 else p for j, p in enumerate(parts)]
    out = np.hstack(parts)
    if not np.all(np.isfinite(out)):
        raise EstimationError(f"{model.spec.family} produced non-finite predictions")
    return out


def select_on_dev(
    family: str,
    train_set: Dataset,
    dev_set: Dataset,
    *,
    grid: Optional[Sequence[Mapping[str, Any]]] = None,
    seed: int = 0,
    threads: int = 1,
) -> ModelSpec:
    """Grid entry with the lowest dev MSE summed over both targets; ties keep the earlier entry."""
    entries = list(grid if grid is not None else DEFAULT_GRIDS.get(family, [{}]))
    if not entries:
        raise ConfigError("Hyperparameter grid is empty", field="grid")
    rich = train_set.spec.use_cov and train_set.spec.use_exog
    best: Optional[ModelSpec] = None
    best_score = np.inf
    for entry in entries:
        spec = ModelSpec(family, entry, seed=seed, rich=rich)
        pred = predict(train(spec, train_set, threads=threads), dev_set)
        score = float(np.mean((pred - dev_set.targets) ** 2, axis=0).sum())
        logger.debug("%r dev MSE %.6f", spec, score)
        if score < best_score:
            best, best_score = spec, score
    assert best is not None
    logger.info("Selected %r (dev MSE %.6f)", best, best_score)
    return best


def save_model(model: TrainedModel, path: PathLike) -> None:
    """Write ``model`` as a versioned joblib file."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "fingerprint": model.fingerprint,
        "split": model.split,
    }
    joblib.dump({"header": header, "model": model}, path)


def load_model(path: PathLike) -> TrainedModel:
    """Read a model written by :func:`save_model`.

    Raises:
        ValidationError: The file is not a ruptura model or has an unknown format version.
    """
    payload = joblib.load(path)
    if not isinstance(payload, dict) or "header" not in payload:
        raise ValidationError(f"{path} is not a ruptura model file", field="path")
    version = payload["header"].get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"Unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})",
            field="format_version",
        )
    return payload["model"]


__all__ = [
    "BASELINES",
    "DEFAULT_GRIDS",
    "DEFAULT_HYPERPARAMETERS",
    "FAMILIES",
    "MODEL_FORMAT_VERSION",
    "ModelSpec",
    "TrainedModel",
    "default_hyperparameters",
    "load_model",
    "predict",
    "save_model",
    "select_on_dev",
    "train",
    "validate_hyperparameters",
]
