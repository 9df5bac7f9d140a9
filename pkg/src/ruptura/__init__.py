"""ruptura: longitudinal discontinuity estimation and forecasting for region-week panels."""
from __future__ import annotations

from ruptura.did_match import DiDResult, did_estimate, match, run_did
from ruptura.evaluator import (
    EvalReport,
    SplitPlan,
    StratumSpec,
    compare_feature_sets,
    compare_models,
    evaluate_model,
    paired_ttest,
    split_by_region,
    stratify_and_eval,
)
from ruptura.exceptions import (
    ConfigError,
    DegenerateFitError,
    DimensionError,
    EstimationError,
    InsufficientDataError,
    LayoutError,
    MissingCovariateError,
    MissingExogError,
    ParseError,
    RupturaError,
    ValidationError,
)
from ruptura.feature_builder import Dataset, FeatureSetSpec, assemble_dataset, build_features
from ruptura.learners import ModelSpec, TrainedModel, load_model, predict, save_model, train
from ruptura.panel_store import (
    EmbeddingTable,
    EventTable,
    Panel,
    RegionMeta,
    load_embeddings,
    load_events,
    load_panel,
    load_region_meta,
)
from ruptura.placebo import PlaceboSummary, placebo_run
from ruptura.rdd_estimator import (
    BatchResult,
    CohortStats,
    DiscontinuityOutcome,
    WindowConfig,
    batch_estimate,
    estimate_discontinuity,
    extract_window,
)
from ruptura.study import Study
from ruptura.synth_oracle import EffectMap, SynthConfig, SynthResult, generate

try:
    from importlib.metadata import version as _pkg_version

    __version__ = _pkg_version("ruptura")
except Exception:
    __version__ = "0.0.0-dev"

__all__ = [
    # Entry points
    "Study",
    "load_panel",
    "load_events",
    "load_region_meta",
    "load_embeddings",
    "extract_window",
    "estimate_discontinuity",
    "batch_estimate",
    "placebo_run",
    "build_features",
    "assemble_dataset",
    "train",
    "predict",
    "save_model",
    "load_model",
    "split_by_region",
    "paired_ttest",
    "evaluate_model",
    "stratify_and_eval",
    "compare_models",
    "compare_feature_sets",
    "match",
    "did_estimate",
    "run_did",
    "generate",
    # Config types
    "WindowConfig",
    "FeatureSetSpec",
    "ModelSpec",
    "SplitPlan",
    "StratumSpec",
    "SynthConfig",
    "EffectMap",
    # Data and result types
    "Panel",
    "EventTable",
    "RegionMeta",
    "EmbeddingTable",
    "DiscontinuityOutcome",
    "CohortStats",
    "BatchResult",
    "PlaceboSummary",
    "Dataset",
    "TrainedModel",
    "EvalReport",
    "DiDResult",
    "SynthResult",
    # Exceptions
    "RupturaError",
    "ParseError",
    "ValidationError",
    "ConfigError",
    "DimensionError",
    "InsufficientDataError",
    "DegenerateFitError",
    "MissingExogError",
    "MissingCovariateError",
    "LayoutError",
    "EstimationError",
    # Meta
    "__version__",
]
