"""Nearest-neighbour control matching and difference-in-differences for single-region events.

A match vector has nine entries::

    [pc_1, pc_2, pc_3, lat_z, lon_z, adjacent, pre, pre, pre]

where the principal components come from the cohort's standardised sociodemographics, the
coordinates are z-scored over the cohort and ``pre`` is the mean score over the target's
before window.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from ruptura.exceptions import (
    ConfigError,
    DegenerateFitError,
    DimensionError,
    EstimationError,
    InsufficientDataError,
    ValidationError,
)
from ruptura.panel_store import EventTable, Panel, RegionMeta
from ruptura.rdd_estimator import WindowConfig

logger = logging.getLogger("ruptura.did_match")

MATCH_VECTOR_LENGTH = 9
N_SOCIODEM_COMPONENTS = 3
DEFAULT_K = 5
ADJACENCY_INDEX = 5

# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PCAState:
    """Principal axes of column-standardised data.

    Attributes:
        mean: Column means used for standardisation.
        scale: Column standard deviations (1 where a column is constant).
        components: ``(k, d)`` unit eigenvectors, descending eigenvalue order.
        eigenvalues: All ``d`` eigenvalues of the standardised sample covariance, descending.
    """

    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        return self.eigenvalues[: self.n_components] / total

    def transform(self, data: np.ndarray) -> np.ndarray:
        z = (np.asarray(data, dtype=np.float64) - self.mean) / self.scale
        return z @ self.components.T

    def inverse_transform(self, projected: np.ndarray) -> np.ndarray:
        return (np.asarray(projected, dtype=np.float64) @ self.components) * self.scale + self.mean


def pca(data: np.ndarray, n_components: int) -> Tuple[PCAState, np.ndarray]:
    """Eigen-decomposition of the standardised sample covariance.

    Each component's largest-magnitude loading is made positive.

    Raises:
        ValidationError: Too few rows or columns for ``n_components``.
        DegenerateFitError: The data's rank is below ``n_components``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("PCA input must be a 2-D matrix")
    n, d = X.shape
    if n_components < 1 or n_components > d:
        raise ValidationError(f"n_components must be in 1..{d}", field="n_components")
    if n <= n_components:
        raise ValidationError(
            f"PCA needs more than {n_components} rows, got {n}", field="n_components"
        )
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    scale[scale == 0.0] = 1.0
    Z = (X - mean) / scale
    cov = Z.T @ Z / (n - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order].T
    tol = max(values[0], 1.0) * max(n, d) * np.finfo(np.float64).eps
    rank = int(np.sum(values > tol))
    if rank < n_components:
        raise DegenerateFitError(
            f"Data has rank {rank}, fewer than the {n_components} components requested"
        )
    for row in vectors:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    state = PCAState(mean=mean, scale=scale, components=vectors[:n_components], eigenvalues=values)
    return state, state.transform(X)


@dataclass(frozen=True)
class CohortProjection:
    """Cohort-level context shared by every match vector: PCs and standardised coordinates."""

    pca: PCAState
    components: Mapping[str, np.ndarray]
    geo: Mapping[str, np.ndarray]

    def __contains__(self, region_id: object) -> bool:
        return region_id in self.components


def fit_cohort(
    meta: Mapping[str, RegionMeta], n_components: int = N_SOCIODEM_COMPONENTS
) -> CohortProjection:
    """Fit the sociodemographic PCA and coordinate z-scores over every region in ``meta``."""
    ids = sorted(meta)
    if not ids:
        raise ValidationError("Region metadata is empty", field="meta")
    widths = {len(meta[r].sociodemographics) for r in ids}
    if len(widths) != 1 or 0 in widths:
        raise DimensionError("Every region needs the same non-empty sociodemographic vector")
    socio = np.array([meta[r].sociodemographics for r in ids], dtype=np.float64)
    state, projected = pca(socio, n_components)
    coords = np.array([[meta[r].latitude, meta[r].longitude] for r in ids], dtype=np.float64)
    sd = coords.std(axis=0)
    sd[sd == 0.0] = 1.0
    geo = (coords - coords.mean(axis=0)) / sd
    logger.info(
        "Cohort PCA over %d regions explains %.3f of sociodemographic variance",
        len(ids),
        float(state.explained_variance_ratio.sum()),
    )
    return CohortProjection(
        pca=state,
        components={r: projected[i] for i, r in enumerate(ids)},
        geo={r: geo[i] for i, r in enumerate(ids)},
    )


# ---------------------------------------------------------------------------
# Match vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchVector:
    region_id: str
    v: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != (MATCH_VECTOR_LENGTH,):
            raise DimensionError(
                f"Match vector must have {MATCH_VECTOR_LENGTH} entries",
                expected=MATCH_VECTOR_LENGTH,
                got=int(v.size),
            )
        if v[ADJACENCY_INDEX] not in (0.0, 1.0):
            raise ValidationError("Adjacency entry must be 0 or 1", field="adjacent")
        if not (v[-3] == v[-2] == v[-1]):
            raise ValidationError("Pre-outcome entries must be identical", field="pre_outcome")
        object.__setattr__(self, "v", v)


def _vector(
    region_id: str, cohort: CohortProjection, adjacent: float, pre_outcome: float
) -> MatchVector:
    if region_id not in cohort:
        raise ValidationError(f"No region metadata for {region_id!r}", field="meta")
    v = np.concatenate(
        [cohort.components[region_id], cohort.geo[region_id], [adjacent], [pre_outcome] * 3]
    )
    return MatchVector(region_id, v)


def build_match_vector(
    candidate: RegionMeta, target: RegionMeta, cohort: CohortProjection, pre_outcome: float
) -> MatchVector:
    """Vector for a control candidate relative to ``target``.

    Raises:
        ValidationError: ``candidate`` is the target itself, or lacks metadata.
    """
    if candidate.region_id == target.region_id:
        raise ValidationError("A region cannot be its own control", field="candidate")
    adjacent = 1.0 if candidate.region_id in target.adjacent_regions else 0.0
    return _vector(candidate.region_id, cohort, adjacent, float(pre_outcome))


def target_vector(target: RegionMeta, cohort: CohortProjection, pre_outcome: float) -> MatchVector:
    """The target's own reference vector; its adjacency entry is 1 so neighbours sit closer."""
    return _vector(target.region_id, cohort, 1.0, float(pre_outcome))


def match(target: MatchVector, candidates: Sequence[MatchVector], k: int = DEFAULT_K) -> List[str]:
    """The ``k`` candidates nearest to ``target`` (Euclidean), ties by region_id.

    Raises:
        ConfigError: ``k < 1``.
        EstimationError: Fewer than ``k`` candidates.
    """
    if k < 1:
        raise ConfigError("k must be >= 1", field="k")
    pool = [c for c in candidates if c.region_id != target.region_id]
    if len(pool) < k:
        raise EstimationError(
            f"Only {len(pool)} eligible controls for {target.region_id!r}, need {k}"
        )
    ranked = sorted(pool, key=lambda c: (float(np.linalg.norm(c.v - target.v)), c.region_id))
    return [c.region_id for c in ranked[:k]]


# ---------------------------------------------------------------------------
# Difference in differences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiDResult:
    """Counterfactual post-period mean for the target and the resulting effect."""

    target_region: str
    matched_regions: List[str]
    counterfactual: float
    observed: float
    did: float
    target_pre: float = float("nan")
    control_pre: float = float("nan")
    control_post: float = float("nan")
    event_week: Optional[int] = None
    distances: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_region": self.target_region,
            "event_week": self.event_week,
            "matched_regions": list(self.matched_regions),
            "distances": dict(self.distances),
            "target_pre": self.target_pre,
            "control_pre": self.control_pre,
            "control_post": self.control_post,
            "counterfactual": self.counterfactual,
            "observed": self.observed,
            "did": self.did,
        }

    def __repr__(self) -> str:
        return (
            f"DiDResult(target={self.target_region!r}, did={self.did:.4f}, "
            f"matched={self.matched_regions!r})"
        )


def did_estimate(
    target_pre: float,
    target_post: float,
    matched_pre: Sequence[float],
    matched_post: Sequence[float],
    *,
    target_region: str = "",
    matched_regions: Sequence[str] = (),
) -> DiDResult:
    """``counterfactual = target_pre + mean(matched_post) - mean(matched_pre)``; DiD is the gap
    between the observed post-period mean and that counterfactual.

    Raises:
        EstimationError: No matched controls.
    """
    pre = np.asarray(matched_pre, dtype=np.float64)
    post = np.asarray(matched_post, dtype=np.float64)
    if pre.size == 0:
        raise EstimationError("DiD needs at least one matched control")
    if pre.shape != post.shape:
        raise DimensionError("Matched pre and post means must align")
    control_pre = float(pre.mean())
    control_post = float(post.mean())
    counterfactual = float(target_pre) + (control_post - control_pre)
    observed = float(target_post)
    return DiDResult(
        target_region=target_region,
        matched_regions=list(matched_regions),
        counterfactual=counterfactual,
        observed=observed,
        did=observed - counterfactual,
        target_pre=float(target_pre),
        control_pre=control_pre,
        control_post=control_post,
    )


def period_means(
    panel: Panel, region_id: str, event_week: int, config: WindowConfig = WindowConfig()
) -> Tuple[Optional[float], Optional[float]]:
    """Mean observed score over the buffered before and after segments (None when empty)."""
    series = panel.series(region_id).between(
        event_week - config.half_width, event_week + config.half_width
    )
    offsets = series.weeks - event_week
    out: List[Optional[float]] = []
    for lo, hi in (config.before_range, config.after_range):
        mask = (offsets >= lo) & (offsets <= hi)
        out.append(float(series.scores[mask].mean()) if mask.any() else None)
    return out[0], out[1]


def eligible_controls(
    panel: Panel,
    meta: Mapping[str, RegionMeta],
    events: EventTable,
    target: str,
    event_week: int,
    config: WindowConfig = WindowConfig(),
) -> List[str]:
    """Regions usable as controls: not the target, with metadata and panel data in both
    periods, and no event of any type within ``T`` weeks of ``event_week``."""
    treated = {
        r
        for (r, _), w in events.entries.items()
        if abs(w - event_week) <= config.half_width
    }
    out = []
    for region_id in panel.region_ids:
        if region_id == target or region_id in treated or region_id not in meta:
            continue
        pre, post = period_means(panel, region_id, event_week, config)
        if pre is None or post is None:
            continue
        out.append(region_id)
    return out


def run_did(
    panel: Panel,
    meta: Mapping[str, RegionMeta],
    events: EventTable,
    event_type: str,
    target: str,
    k: int = DEFAULT_K,
    config: WindowConfig = WindowConfig(),
    *,
    cohort: Optional[CohortProjection] = None,
    threads: int = 1,
) -> DiDResult:
    """Eligibility filter, cohort PCA, match vectors, ``k`` nearest controls, then DiD."""
    event_week = events.get(target, event_type)
    if event_week is None:
        raise ValidationError(f"No {event_type!r} event for region {target!r}", field="target")
    if target not in meta:
        raise ValidationError(f"No region metadata for target {target!r}", field="target")
    target_pre, target_post = period_means(panel, target, event_week, config)
    if target_pre is None or target_post is None:
        raise InsufficientDataError(
            f"Target {target!r} has no observations in one of its periods",
            segment="before" if target_pre is None else "after",
            region_id=target,
        )
    cohort = cohort or fit_cohort(meta)
    controls = eligible_controls(panel, meta, events, target, event_week, config)
    means = Parallel(n_jobs=threads, prefer="threads")(
        delayed(period_means)(panel, r, event_week, config) for r in controls
    )
    by_region = dict(zip(controls, means))
    reference = target_vector(meta[target], cohort, target_pre)
    vectors = [
        build_match_vector(meta[r], meta[target], cohort, by_region[r][0]) for r in controls
    ]
    matched = match(reference, vectors, k)
    distances = {
        v.region_id: float(np.linalg.norm(v.v - reference.v))
        for v in vectors
        if v.region_id in matched
    }
    result = did_estimate(
        target_pre,
        target_post,
        [by_region[r][0] for r in matched],
        [by_region[r][1] for r in matched],
        target_region=target,
        matched_regions=matched,
    )
    result = replace(result, event_week=int(event_week), distances=distances)
    logger.info("%r", result)
    return result
