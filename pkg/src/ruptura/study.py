"""Study facade: one cohort's inputs, seed and thread budget, driving every pipeline stage."""
from __future__ import annotations

import logging
import os
from datetime import date
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from ruptura.did_match import DEFAULT_K, CohortProjection, DiDResult, fit_cohort, run_did
from ruptura.evaluator import (
    DEFAULT_RATIOS,
    EvalReport,
    SplitPlan,
    StratumSpec,
    compare_models,
    evaluate_model,
    split_by_region,
)
from ruptura.exceptions import ConfigError, ValidationError
from ruptura.feature_builder import Dataset, FeatureSetSpec, assemble_dataset
from ruptura.learners import BASELINES, ModelSpec, TrainedModel, train
from ruptura.panel_store import (
    DEFAULT_MIN_USERS,
    EmbeddingTable,
    EventTable,
    Panel,
    RegionMeta,
    difference,
    filter_reliability,
    load_embeddings,
    load_events,
    load_panel,
    load_region_meta,
    zscore_per_region,
)
from ruptura.placebo import DEFAULT_EPISODES, PlaceboSummary, placebo_run
from ruptura.rdd_estimator import BatchResult, WindowConfig, batch_estimate
from ruptura.synth_oracle import SynthResult

logger = logging.getLogger("ruptura.study")

SEED_ENV = "RUPTURA_SEED"
THREADS_ENV = "RUPTURA_THREADS"


def resolve_seed(seed: Optional[int]) -> int:
    """Resolve the seed from the argument or the environment variable."""
    if seed is not None:
        return int(seed)
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        raise ConfigError(
            f"No seed provided. Pass seed= (or --seed) or set the {SEED_ENV} environment variable.",
            field="seed",
        )
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}", field="seed") from None


def resolve_threads(threads: Optional[int]) -> int:
    """Resolve the thread cap from the argument, the environment variable, or 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            threads = int(raw) if raw else 1
        except ValueError:
            raise ConfigError(
                f"{THREADS_ENV} must be an integer, got {raw!r}", field="threads"
            ) from None
    if threads < 1:
        raise ConfigError("threads must be >= 1", field="threads")
    return threads


def baseline_family(name: str) -> str:
    """Accept ``mean``/``no_change``/``forecast`` as short names for the baseline families."""
    family = name if name.startswith("baseline_") else f"baseline_{name}"
    if family not in BASELINES:
        raise ConfigError(
            f"Unknown baseline {name!r}; expected one of {BASELINES}", field="baseline"
        )
    return family


class Study:
    """Pipeline over one cohort: estimation, placebo checks, forecasting and matching.

    Args:
        panel: Outcome panel (the running score).
        events: Event table.
        meta: Region metadata, needed for stratified evaluation and DiD.
        embeddings: Region embeddings, needed for ``exog`` features.
        covariate_panel: Second running score, needed for ``cov`` features.
        window: Event window geometry. Defaults to T=9, b=1, three points per segment.
        seed: Seed for every random choice. If not provided, reads ``RUPTURA_SEED`` when a
            stage first needs it.
        threads: Parallelism cap. If not provided, reads ``RUPTURA_THREADS`` (default 1).
            Results never depend on it.

    Usage::

        from ruptura import Study

        study = Study.from_files("panel.csv", "events.csv", "anxiety", seed=42)
        result = study.estimate("first_case")
        print(result.stats["delta0"])
    """

    def __init__(
        self,
        panel: Panel,
        events: EventTable,
        *,
        meta: Optional[Mapping[str, RegionMeta]] = None,
        embeddings: Optional[EmbeddingTable] = None,
        covariate_panel: Optional[Panel] = None,
        window: WindowConfig = WindowConfig(),
        seed: Optional[int] = None,
        threads: Optional[int] = None,
    ):
        self.panel = panel
        self.events = events
        self.meta = dict(meta) if meta is not None else None
        self.embeddings = embeddings
        self.covariate_panel = covariate_panel
        self.window = window
        self._seed = seed
        self.threads = resolve_threads(threads)
        self._batches: Dict[tuple, BatchResult] = {}
        self._cohort: Optional[CohortProjection] = None

    @property
    def seed(self) -> int:
        """Resolved on first use, so seed-free stages run without one."""
        if self._seed is None:
            self._seed = resolve_seed(None)
        return self._seed

    @classmethod
    def from_files(
        cls,
        panel_path: Union[str, os.PathLike],
        events_path: Union[str, os.PathLike],
        score_name: str = "score",
        *,
        meta_path: Optional[Union[str, os.PathLike]] = None,
        embeddings_path: Optional[Union[str, os.PathLike]] = None,
        covariate_path: Optional[Union[str, os.PathLike]] = None,
        covariate_name: str = "covariate",
        epoch: Optional[date] = None,
        **kwargs: Any,
    ) -> Study:
        """Load every input from CSV."""
        return cls(
            load_panel(panel_path, score_name, epoch=epoch),
            load_events(events_path, epoch=epoch),
            meta=load_region_meta(meta_path) if meta_path else None,
            embeddings=load_embeddings(embeddings_path) if embeddings_path else None,
            covariate_panel=(
                load_panel(covariate_path, covariate_name, epoch=epoch) if covariate_path else None
            ),
            **kwargs,
        )

    @classmethod
    def from_synth(cls, result: SynthResult, **kwargs: Any) -> Study:
        kwargs.setdefault("seed", result.config.seed)
        return cls(
            result.panel,
            result.events,
            meta=result.meta,
            embeddings=result.embeddings,
            covariate_panel=result.covariate_panel,
            **kwargs,
        )

    # -- preprocessing -----------------------------------------------------

    def preprocess(
        self,
        *,
        min_users: Optional[int] = DEFAULT_MIN_USERS,
        zscore: bool = False,
        difference_lag: Optional[int] = None,
    ) -> Study:
        """Apply reliability filtering, optional seasonal differencing and z-scoring to both
        panels, in that order. Returns ``self``."""
        for attr in ("panel", "covariate_panel"):
            panel = getattr(self, attr)
            if panel is None:
                continue
            if min_users is not None:
                panel = filter_reliability(panel, min_users)
            if difference_lag is not None:
                panel = difference(panel, difference_lag)
            if zscore:
                panel = zscore_per_region(panel)
            setattr(self, attr, panel)
            logger.info("Preprocessed %r", panel)
        self._batches.clear()
        return self

    # -- estimation --------------------------------------------------------

    def estimate(self, event_type: str, *, covariate: bool = False) -> BatchResult:
        """Discontinuity per region for ``event_type`` on the outcome (or covariate) panel."""
        panel = self.covariate_panel if covariate else self.panel
        if panel is None:
            raise ValidationError("No covariate panel loaded", field="covariate_panel")
        key = (event_type, covariate)
        if key not in self._batches:
            self._batches[key] = batch_estimate(
                panel, self.events, event_type, self.window, threads=self.threads
            )
        return self._batches[key]

    def placebo(self, n_episodes: int = DEFAULT_EPISODES) -> PlaceboSummary:
        return placebo_run(self.panel, n_episodes, self.window, self.seed, threads=self.threads)

    # -- forecasting -------------------------------------------------------

    def dataset(self, event_type: str, features: Union[FeatureSetSpec, str] = "P,RC") -> Dataset:
        """Feature matrix and targets for every ``event_type`` episode with the requested blocks."""
        spec = FeatureSetSpec.parse(features) if isinstance(features, str) else features
        result = self.estimate(event_type)
        cov = self.estimate(event_type, covariate=True) if spec.use_cov else None
        if spec.use_exog and self.embeddings is None:
            raise ValidationError("exog features need region embeddings", field="embeddings")
        return assemble_dataset(
            result.outcomes,
            result.windows,
            spec,
            cov_outcomes=cov.outcomes if cov else None,
            cov_windows=cov.windows if cov else None,
            embeddings=self.embeddings,
            config=self.window,
        )

    def split(self, dataset: Dataset, ratios: Sequence[float] = DEFAULT_RATIOS) -> SplitPlan:
        return split_by_region(dataset.region_ids, ratios, self.seed)

    def train(
        self,
        family: str,
        dataset: Dataset,
        plan: Optional[SplitPlan] = None,
        *,
        per_target: bool = False,
        **hyperparameters: Any,
    ) -> TrainedModel:
        """Fit ``family`` on the plan's training regions (all rows without a plan)."""
        spec = ModelSpec.for_features(family, dataset.spec, self.seed, **hyperparameters)
        if per_target:
            spec = ModelSpec(spec.family, spec.hyperparameters, spec.seed, True, spec.rich)
        rows = dataset.subset(plan.train) if plan is not None else dataset
        return train(
            spec, rows, threads=self.threads, split=plan.to_dict() if plan is not None else None
        )

    def evaluate(
        self,
        model: TrainedModel,
        dataset: Dataset,
        plan: SplitPlan,
        *,
        baseline: Optional[str] = "mean",
        strata: Optional[Union[StratumSpec, str]] = None,
    ) -> EvalReport:
        baseline_spec = (
            ModelSpec(baseline_family(baseline), seed=self.seed) if baseline is not None else None
        )
        stratum = StratumSpec(strata) if isinstance(strata, str) else strata
        return evaluate_model(
            model,
            dataset,
            plan,
            baseline=baseline_spec,
            meta=self.meta,
            strata=stratum,
            threads=self.threads,
        )

    def compare(
        self,
        dataset: Dataset,
        plan: SplitPlan,
        families: Sequence[str],
        *,
        baseline: str = "mean",
    ) -> List[EvalReport]:
        specs = [ModelSpec.for_features(f, dataset.spec, self.seed) for f in families]
        return compare_models(
            dataset,
            plan,
            specs,
            ModelSpec(baseline_family(baseline), seed=self.seed),
            threads=self.threads,
        )

    # -- matching ----------------------------------------------------------

    def did(self, target: str, event_type: str, k: int = DEFAULT_K) -> DiDResult:
        if self.meta is None:
            raise ValidationError("DiD matching needs region metadata", field="meta")
        if self._cohort is None:
            self._cohort = fit_cohort(self.meta)
        return run_did(
            self.panel,
            self.meta,
            self.events,
            event_type,
            target,
            k,
            self.window,
            cohort=self._cohort,
            threads=self.threads,
        )

    def __repr__(self) -> str:
        return f"Study(panel={self.panel!r}, seed={self._seed}, threads={self.threads})"
