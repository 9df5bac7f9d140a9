"""Region-level splits, error metrics, paired significance tests and stratified evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from ruptura._utils import PathLike
from ruptura.exceptions import ConfigError, DimensionError, EstimationError, ValidationError
from ruptura.feature_builder import TARGET_COLUMNS, Dataset
from ruptura.learners import ModelSpec, TrainedModel, predict, train
from ruptura.panel_store import RegionMeta
from ruptura.rdd_estimator import CohortStats, DiscontinuityOutcome

logger = logging.getLogger("ruptura.evaluator")

DEFAULT_RATIOS = (0.6, 0.2, 0.2)
MIN_SPLIT_REGIONS = 5
SPLIT_NAMES = ("train", "dev", "test")
STRATUM_KEYS = ("ses", "urbanicity")
TERTILE_LABELS = ("low", "medium", "high")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/dev/test region sets (each sorted)."""

    train: Tuple[str, ...]
    dev: Tuple[str, ...]
    test: Tuple[str, ...]
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0

    def __post_init__(self) -> None:
        for name in SPLIT_NAMES:
            object.__setattr__(self, name, tuple(sorted(getattr(self, name))))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        a, b, c = set(self.train), set(self.dev), set(self.test)
        if a & b or a & c or b & c:
            raise ValidationError("Split sets must be region-disjoint", field="split")

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)

    def part(self, name: str) -> Tuple[str, ...]:
        if name not in SPLIT_NAMES:
            raise ValidationError(f"Unknown split {name!r}", field="split")
        return getattr(self, name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train": list(self.train),
            "dev": list(self.dev),
            "test": list(self.test),
            "ratios": list(self.ratios),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SplitPlan:
        return cls(
            train=tuple(data.get("train", ())),
            dev=tuple(data.get("dev", ())),
            test=tuple(data.get("test", ())),
            ratios=tuple(data.get("ratios", DEFAULT_RATIOS)),
            seed=data.get("seed", 0),
        )

    def __repr__(self) -> str:
        return f"SplitPlan(sizes={self.sizes}, seed={self.seed})"


def split_by_region(
    region_ids: Sequence[str],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitPlan:
    """Shuffle regions with ``seed`` and cut contiguous train/dev/test blocks.

    Train and dev sizes are ``ratio * n`` rounded half up; test takes the rest.

    Raises:
        ConfigError: Ratios are not three non-negative numbers summing to 1.
        ValidationError: Fewer than five regions.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(
            f"Split ratios must be three non-negative values summing to 1, got {ratios}",
            field="ratios",
        )
    ids = sorted(set(region_ids))
    n = len(ids)
    if n < MIN_SPLIT_REGIONS:
        raise ValidationError(
            f"Need at least {MIN_SPLIT_REGIONS} regions to split, got {n}", field="region_ids"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = int(math.floor(ratios[0] * n + 0.5))
    n_dev = min(int(math.floor(ratios[1] * n + 0.5)), n - n_train)
    plan = SplitPlan(
        train=tuple(shuffled[:n_train]),
        dev=tuple(shuffled[n_train : n_train + n_dev]),
        test=tuple(shuffled[n_train + n_dev :]),
        ratios=ratios,
        seed=seed,
    )
    logger.info("Split %d regions into %s", n, plan.sizes)
    return plan


# ---------------------------------------------------------------------------
# Metrics and significance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    """Per-target MSE and Pearson r; r is None when either column is constant or n < 2."""

    mse: Tuple[float, float]
    pearson_r: Tuple[Optional[float], Optional[float]]
    n: int


def _pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    if a.size < 2 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return None
    r = float(stats.pearsonr(a, b)[0])
    return float(np.clip(r, -1.0, 1.0))


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise DimensionError(
            f"Predictions {pred.shape} and truth {truth.shape} must be equal (n, 2) matrices"
        )
    return pred, truth


def metrics(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    pred, truth = _check_pair(pred, truth)
    mse = np.mean((pred - truth) ** 2, axis=0) if len(pred) else np.full(pred.shape[1], np.nan)
    r = [_pearson(pred[:, j], truth[:, j]) for j in range(pred.shape[1])]
    return Metrics(mse=tuple(float(v) for v in mse), pearson_r=tuple(r), n=len(pred))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    n: int


def paired_ttest(err_model: Sequence[float], err_baseline: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on ``err_model - err_baseline`` with ``n - 1`` degrees of freedom.

    Zero-variance differences give ``t = 0, p = 1`` when their mean is zero and
    ``t = ±inf, p = 0`` otherwise.
    """
    a = np.asarray(err_model, dtype=np.float64)
    b = np.asarray(err_baseline, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("Error vectors must be one-dimensional and of equal length")
    n = a.size
    if n < 2:
        raise ValidationError("A paired t-test needs at least two pairs", field="n")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), df=n - 1))
    return TTestResult(float(t), min(max(p, 0.0), 1.0), n)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class TargetReport:
    mse: float
    pearson_r: Optional[float]
    t_statistic: Optional[float] = None
    p_value: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mse": self.mse,
            "pearson_r": self.pearson_r,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
        }


@dataclass
class EvalReport:
    """Test-set performance of one model, optionally against a baseline and per stratum."""

    model_name: str
    n_test: int
    targets: Dict[str, TargetReport]
    baseline_name: Optional[str] = None
    stratum_key: Optional[str] = None
    strata: Dict[str, EvalReport] = field(default_factory=dict)

    def __getitem__(self, target: str) -> TargetReport:
        return self.targets[target]

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "model": self.model_name,
            "n_test": self.n_test,
            "baseline": self.baseline_name,
            "targets": {k: v.to_dict() for k, v in self.targets.items()},
        }
        if self.strata:
            out["stratum_key"] = self.stratum_key
            out["strata"] = {k: v.to_dict() for k, v in self.strata.items()}
        return out

    def __repr__(self) -> str:
        parts = ", ".join(f"{k}: mse={v.mse:.4f}" for k, v in self.targets.items())
        return f"EvalReport(model={self.model_name!r}, n={self.n_test}, {parts})"


def evaluate_predictions(
    pred: np.ndarray,
    truth: np.ndarray,
    *,
    model_name: str,
    baseline_pred: Optional[np.ndarray] = None,
    baseline_name: Optional[str] = None,
) -> EvalReport:
    """Metrics per target plus, with ``baseline_pred``, a paired t-test on squared errors."""
    pred, truth = _check_pair(pred, truth)
    m = metrics(pred, truth)
    tests: List[Optional[TTestResult]] = [None] * truth.shape[1]
    if baseline_pred is not None:
        baseline_pred, _ = _check_pair(baseline_pred, truth)
        if len(truth) >= 2:
            model_err = (pred - truth) ** 2
            base_err = (baseline_pred - truth) ** 2
            tests = [paired_ttest(model_err[:, j], base_err[:, j]) for j in range(truth.shape[1])]
    targets = {
        name: TargetReport(
            mse=m.mse[j],
            pearson_r=m.pearson_r[j],
            t_statistic=tests[j].t_statistic if tests[j] else None,
            p_value=tests[j].p_value if tests[j] else None,
        )
        for j, name in enumerate(TARGET_COLUMNS)
    }
    return EvalReport(
        model_name=model_name,
        n_test=len(truth),
        targets=targets,
        baseline_name=baseline_name if baseline_pred is not None else None,
    )


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumSpec:
    """How to bin regions: by SES composite or urbanicity, into ``n_bins`` equal-count groups.

    ``thresholds`` (``n_bins - 1`` increasing cut points on the score) replaces equal-count
    binning; a region goes to the first bin whose upper cut exceeds its score.
    """

    key: str = "ses"
    n_bins: int = 3
    thresholds: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.key not in STRATUM_KEYS:
            raise ConfigError(
                f"Stratum key must be one of {STRATUM_KEYS}, got {self.key!r}", field="key"
            )
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2", field="n_bins")
        if self.thresholds is not None:
            cuts = tuple(float(t) for t in self.thresholds)
            if len(cuts) != self.n_bins - 1 or any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ConfigError(
                    f"thresholds must be {self.n_bins - 1} strictly increasing values",
                    field="thresholds",
                )
            object.__setattr__(self, "thresholds", cuts)

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.n_bins == 3:
            return TERTILE_LABELS
        return tuple(f"q{i + 1}" for i in range(self.n_bins))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "key": self.key,
            "n_bins": self.n_bins,
            "thresholds": list(self.thresholds) if self.thresholds is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> StratumSpec:
        thresholds = data.get("thresholds")
        return cls(
            key=data.get("key", "ses"),
            n_bins=data.get("n_bins", 3),
            thresholds=tuple(thresholds) if thresholds is not None else None,
        )


def _zscore(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    return np.zeros_like(values) if sd == 0.0 else (values - values.mean()) / sd


def stratum_scores(meta: Mapping[str, RegionMeta], key: str) -> Dict[str, float]:
    """SES composite (mean of z-scored education and income over all of ``meta``) or urbanicity."""
    ids = sorted(meta)
    if key == "urbanicity":
        return {r: meta[r].urbanicity for r in ids}
    if key != "ses":
        raise ConfigError(f"Unknown stratum key {key!r}", field="key")
    if not ids:
        return {}
    education = _zscore(np.array([meta[r].education for r in ids], dtype=np.float64))
    income = _zscore(np.array([meta[r].income for r in ids], dtype=np.float64))
    score = (education + income) / 2.0
    return {r: float(s) for r, s in zip(ids, score)}


def assign_strata(
    region_ids: Sequence[str], meta: Mapping[str, RegionMeta], spec: StratumSpec
) -> Dict[str, str]:
    """Map each region with metadata to a stratum label; regions without metadata are dropped."""
    scores = stratum_scores(meta, spec.key)
    missing = sorted(r for r in set(region_ids) if r not in scores)
    if missing:
        logger.warning(
            "No region metadata for %d regions, excluded from strata: %s",
            len(missing),
            missing[:5],
        )
    ranked = sorted((scores[r], r) for r in set(region_ids) if r in scores)
    labels = spec.labels
    out: Dict[str, str] = {}
    if spec.thresholds is not None:
        for score, r in ranked:
            out[r] = labels[int(np.searchsorted(spec.thresholds, score, side="right"))]
        return out
    for label, chunk in zip(labels, np.array_split(np.arange(len(ranked)), spec.n_bins)):
        for i in chunk:
            out[ranked[int(i)][1]] = label
    return out


def stratify_and_eval(
    pred: np.ndarray,
    truth: np.ndarray,
    region_ids: Sequence[str],
    meta: Mapping[str, RegionMeta],
    spec: StratumSpec,
    *,
    model_name: str,
    baseline_pred: Optional[np.ndarray] = None,
    baseline_name: Optional[str] = None,
) -> EvalReport:
    """Overall report with one sub-report per stratum."""
    pred, truth = _check_pair(pred, truth)
    if len(region_ids) != len(truth):
        raise DimensionError("region_ids must align with prediction rows")
    report = evaluate_predictions(
        pred, truth, model_name=model_name, baseline_pred=baseline_pred, baseline_name=baseline_name
    )
    report.stratum_key = spec.key
    assignment = assign_strata(region_ids, meta, spec)
    for label in spec.labels:
        idx = [i for i, r in enumerate(region_ids) if assignment.get(r) == label]
        if not idx:
            continue
        report.strata[label] = evaluate_predictions(
            pred[idx],
            truth[idx],
            model_name=model_name,
            baseline_pred=baseline_pred[idx] if baseline_pred is not None else None,
            baseline_name=baseline_name,
        )
    return report


def stratified_outcome_stats(
    outcomes: Sequence[DiscontinuityOutcome],
    meta: Mapping[str, RegionMeta],
    spec: StratumSpec = StratumSpec(),
) -> Dict[str, CohortStats]:
    """Descriptive delta statistics per stratum, independent of any model."""
    assignment = assign_strata([o.region_id for o in outcomes], meta, spec)
    return {
        label: CohortStats.from_outcomes(
            [o for o in outcomes if assignment.get(o.region_id) == label]
        )
        for label in spec.labels
    }


# ---------------------------------------------------------------------------
# Comparisons
# ---------------------------------------------------------------------------

def _split_sets(dataset: Dataset, plan: SplitPlan) -> Tuple[Dataset, Dataset]:
    train_set = dataset.subset(plan.train)
    test_set = dataset.subset(plan.test)
    if len(train_set) == 0 or len(test_set) == 0:
        raise EstimationError(
            f"Split leaves {len(train_set)} training and {len(test_set)} test rows"
        )
    return train_set, test_set


def evaluate_model(
    model: TrainedModel,
    dataset: Dataset,
    plan: SplitPlan,
    *,
    baseline: Optional[ModelSpec] = None,
    meta: Optional[Mapping[str, RegionMeta]] = None,
    strata: Optional[StratumSpec] = None,
    threads: int = 1,
) -> EvalReport:
    """Score a trained model on the test split, against ``baseline`` fitted on the train split."""
    train_set, test_set = _split_sets(dataset, plan)
    pred = predict(model, test_set)
    baseline_pred = None
    if baseline is not None:
        baseline_pred = predict(train(baseline, train_set, threads=threads), test_set)
    kwargs = dict(
        model_name=model.spec.family,
        baseline_pred=baseline_pred,
        baseline_name=baseline.family if baseline is not None else None,
    )
    if strata is not None:
        if meta is None:
            raise ValidationError("Stratified evaluation needs region metadata", field="meta")
        return stratify_and_eval(
            pred, test_set.targets, test_set.region_ids, meta, strata, **kwargs
        )
    return evaluate_predictions(pred, test_set.targets, **kwargs)


def compare_models(
    dataset: Dataset,
    plan: SplitPlan,
    model_specs: Sequence[ModelSpec],
    baseline: ModelSpec,
    *,
    threads: int = 1,
) -> List[EvalReport]:
    """Train every spec on the train split and test each against ``baseline``.

    The baseline's own report comes first.
    """
    train_set, test_set = _split_sets(dataset, plan)
    baseline_pred = predict(train(baseline, train_set, threads=threads), test_set)
    reports = [
        evaluate_predictions(baseline_pred, test_set.targets, model_name=baseline.family)
    ]
    for spec in model_specs:
        pred = predict(train(spec, train_set, threads=threads), test_set)
        reports.append(
            evaluate_predictions(
                pred,
                test_set.targets,
                model_name=spec.family,
                baseline_pred=baseline_pred,
                baseline_name=baseline.family,
            )
        )
        logger.info("%r", reports[-1])
    return reports


def compare_feature_sets(
    datasets: Mapping[str, Dataset],
    plan: SplitPlan,
    spec: ModelSpec,
    *,
    reference: str,
    threads: int = 1,
) -> List[EvalReport]:
    """One learner across feature sets, each tested against the ``reference`` feature set.

    Only test regions present in every dataset are scored, so the paired test compares the
    same episodes.
    """
    if reference not in datasets:
        raise ConfigError(
            f"Reference feature set {reference!r} not among {sorted(datasets)}", field="reference"
        )
    common = set(plan.test)
    for ds in datasets.values():
        common &= set(ds.region_ids)
    shared = sorted(common)
    if not shared:
        raise EstimationError("No test region is present in every feature set")
    predictions: Dict[str, np.ndarray] = {}
    truth: Optional[np.ndarray] = None
    for label, ds in datasets.items():
        model_spec = ModelSpec.for_features(
            spec.family, ds.spec, seed=spec.seed, **_explicit_overrides(spec)
        )
        model = train(model_spec, ds.subset(plan.train), threads=threads)
        test_set = ds.subset(shared)
        predictions[label] = predict(model, test_set)
        truth = test_set.targets
    assert truth is not None
    reports = []
    for label in datasets:
        reports.append(
            evaluate_predictions(
                predictions[label],
                truth,
                model_name=f"{spec.family} [{label}]",
                baseline_pred=None if label == reference else predictions[reference],
                baseline_name=None if label == reference else f"{spec.family} [{reference}]",
            )
        )
    return reports


def _explicit_overrides(spec: ModelSpec) -> Dict[str, Any]:
    """Hyperparameters set on ``spec`` by the caller, even where they equal a default."""
    return dict(spec.overrides)


def save_predictions(
    region_ids: Sequence[str],
    pred: np.ndarray,
    truth: np.ndarray,
    path: PathLike,
    *,
    strata: Optional[Mapping[str, str]] = None,
) -> None:
    """Per-episode predictions next to the true targets, for external plotting."""
    pred, truth = _check_pair(pred, truth)
    frame = pd.DataFrame(
        {
            "region_id": list(region_ids),
            "delta0_true": truth[:, 0],
            "delta1_true": truth[:, 1],
            "delta0_pred": pred[:, 0],
            "delta1_pred": pred[:, 1],
        }
    )
    if strata is not None:
        frame["stratum"] = [strata.get(r, "") for r in region_ids]
    frame.to_csv(path, index=False)
