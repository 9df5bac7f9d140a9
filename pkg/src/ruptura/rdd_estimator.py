"""Longitudinal regression discontinuity: event windows, segment fits, discontinuity outcomes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ruptura._utils import PathLike
from ruptura.exceptions import (
    DegenerateFitError,
    InsufficientDataError,
    RupturaError,
    ValidationError,
)
from ruptura.panel_store import EventTable, Panel

logger = logging.getLogger("ruptura.rdd_estimator")

DEFAULT_HALF_WIDTH = 9
DEFAULT_BUFFER = 1
DEFAULT_MIN_POINTS = 3

OUTCOME_COLUMNS = (
    "region_id",
    "event_type",
    "delta0",
    "delta1",
    "beta0_before",
    "beta1_before",
    "beta0_after",
    "beta1_after",
    "n_before",
    "n_after",
)

STAT_ROWS = (
    "delta0",
    "delta1",
    "y_at_event",
    "y_after_event",
    "beta0_before",
    "beta1_before",
)


@dataclass(frozen=True)
class WindowConfig:
    """Event window geometry.

    Attributes:
        half_width: T, the number of weeks on each side of the event (window of 2T+1 weeks).
        buffer: b, weeks adjacent to the event excluded from both segments. With ``b >= 1`` the
            segments are ``[-T, -b]`` and ``[b, T]``; with ``b == 0`` the event week belongs to
            the after segment: ``[-T, -1]`` and ``[0, T]``.
        min_points_per_segment: Fewest observed weeks a segment may have.
    """

    half_width: int = DEFAULT_HALF_WIDTH
    buffer: int = DEFAULT_BUFFER
    min_points_per_segment: int = DEFAULT_MIN_POINTS

    def __post_init__(self) -> None:
        if self.half_width < 1:
            raise ValidationError("half_width must be >= 1", field="half_width")
        if self.buffer < 0:
            raise ValidationError("buffer must be >= 0", field="buffer")
        if self.half_width <= self.buffer:
            raise ValidationError("half_width must exceed buffer", field="half_width")
        if self.min_points_per_segment < 2:
            raise ValidationError(
                "min_points_per_segment must be >= 2", field="min_points_per_segment"
            )

    @property
    def before_range(self) -> Tuple[int, int]:
        return -self.half_width, -max(self.buffer, 1)

    @property
    def after_range(self) -> Tuple[int, int]:
        return self.buffer, self.half_width

    @property
    def before_offsets(self) -> np.ndarray:
        lo, hi = self.before_range
        return np.arange(lo, hi + 1)

    @property
    def after_offsets(self) -> np.ndarray:
        lo, hi = self.after_range
        return np.arange(lo, hi + 1)

    def with_buffer(self, buffer: int) -> WindowConfig:
        return WindowConfig(self.half_width, buffer, self.min_points_per_segment)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WindowConfig:
        return cls(
            half_width=int(data.get("half_width", DEFAULT_HALF_WIDTH)),
            buffer=int(data.get("buffer", DEFAULT_BUFFER)),
            min_points_per_segment=int(data.get("min_points_per_segment", DEFAULT_MIN_POINTS)),
        )

    def to_dict(self) -> Dict[str, int]:
        return {
            "half_width": self.half_width,
            "buffer": self.buffer,
            "min_points_per_segment": self.min_points_per_segment,
        }


@dataclass(frozen=True)
class EpisodeWindow:
    """Observed scores around one event, split into buffered before/after segments.

    Offsets are weeks relative to ``event_week``; missing weeks are simply absent.
    """

    region_id: str
    event_week: int
    before_t: np.ndarray
    before_y: np.ndarray
    after_t: np.ndarray
    after_y: np.ndarray
    y_at_event: Optional[float] = None
    y_after_event: Optional[float] = None

    @property
    def before(self) -> List[Tuple[int, float]]:
        return list(zip(self.before_t.tolist(), self.before_y.tolist()))

    @property
    def after(self) -> List[Tuple[int, float]]:
        return list(zip(self.after_t.tolist(), self.after_y.tolist()))

    def __repr__(self) -> str:
        return (
            f"EpisodeWindow(region_id={self.region_id!r}, event_week={self.event_week}, "
            f"n_before={len(self.before_t)}, n_after={len(self.after_t)})"
        )


@dataclass(frozen=True)
class LineFit:
    """Least-squares line in event-offset coordinates: y = beta0 + beta1 * t."""

    beta0: float
    beta1: float
    n: int

    def predict(self, t: np.ndarray) -> np.ndarray:
        return self.beta0 + self.beta1 * np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class DiscontinuityOutcome:
    """Before/after fits for one region-event and the resulting (delta0, delta1)."""

    region_id: str
    event_type: str
    before_fit: LineFit
    after_fit: LineFit
    delta0: float
    delta1: float
    y_at_event: Optional[float] = None
    y_after_event: Optional[float] = None

    def to_row(self) -> Dict[str, Any]:
        return {
            "region_id": self.region_id,
            "event_type": self.event_type,
            "delta0": self.delta0,
            "delta1": self.delta1,
            "beta0_before": self.before_fit.beta0,
            "beta1_before": self.before_fit.beta1,
            "beta0_after": self.after_fit.beta0,
            "beta1_after": self.after_fit.beta1,
            "n_before": self.before_fit.n,
            "n_after": self.after_fit.n,
        }

    def __repr__(self) -> str:
        return (
            f"DiscontinuityOutcome(region_id={self.region_id!r}, "
            f"delta0={self.delta0:.4f}, delta1={self.delta1:.4f})"
        )


@dataclass(frozen=True)
class SummaryRow:
    mean: float
    std: float
    median: float
    n: int

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std, "median": self.median, "n": self.n}


@dataclass(frozen=True)
class CohortStats:
    """Descriptive statistics across a cohort of outcomes (std uses ddof=1)."""

    rows: Mapping[str, SummaryRow] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.rows

    def __getitem__(self, name: str) -> SummaryRow:
        return self.rows[name]

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {name: row.to_dict() for name, row in self.rows.items()}

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[DiscontinuityOutcome]) -> CohortStats:
        if not outcomes:
            return cls({})
        columns = {
            "delta0": [o.delta0 for o in outcomes],
            "delta1": [o.delta1 for o in outcomes],
            "y_at_event": [o.y_at_event for o in outcomes if o.y_at_event is not None],
            "y_after_event": [o.y_after_event for o in outcomes if o.y_after_event is not None],
            "beta0_before": [o.before_fit.beta0 for o in outcomes],
            "beta1_before": [o.before_fit.beta1 for o in outcomes],
        }
        rows = {name: _summary(columns[name]) for name in STAT_ROWS if columns[name]}
        return cls(rows)


def _summary(values: Sequence[float]) -> SummaryRow:
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return SummaryRow(float(np.mean(arr)), std, float(np.median(arr)), int(arr.size))


@dataclass(frozen=True)
class SkippedEpisode:
    region_id: str
    reason: str


@dataclass(frozen=True)
class BatchResult:
    """Outcomes (sorted by region_id), their windows, cohort statistics and skipped regions."""

    event_type: str
    outcomes: List[DiscontinuityOutcome]
    windows: Dict[str, EpisodeWindow]
    stats: CohortStats
    skipped: List[SkippedEpisode]

    def __iter__(self):
        # allows ``outcomes, stats = batch_estimate(...)``
        return iter((self.outcomes, self.stats))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([o.to_row() for o in self.outcomes], columns=list(OUTCOME_COLUMNS))

    def __repr__(self) -> str:
        return (
            f"BatchResult(event_type={self.event_type!r}, outcomes={len(self.outcomes)}, "
            f"skipped={len(self.skipped)})"
        )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def extract_window(
    panel: Panel,
    region_id: str,
    event_week: int,
    config: WindowConfig = WindowConfig(),
) -> EpisodeWindow:
    """Collect the buffered before/after segments around ``event_week``.

    Raises:
        InsufficientDataError: A segment has fewer than ``config.min_points_per_segment`` points.
    """
    series = panel.series(region_id).between(
        event_week - config.half_width, event_week + config.half_width
    )
    offsets = series.weeks - event_week
    b_lo, b_hi = config.before_range
    a_lo, a_hi = config.after_range
    before = (offsets >= b_lo) & (offsets <= b_hi)
    after = (offsets >= a_lo) & (offsets <= a_hi)
    for name, mask in (("before", before), ("after", after)):
        count = int(mask.sum())
        if count < config.min_points_per_segment:
            raise InsufficientDataError(
                f"{name} segment of {region_id!r} has {count} points, "
                f"need {config.min_points_per_segment}",
                segment=name,
                region_id=region_id,
            )
    return EpisodeWindow(
        region_id=region_id,
        event_week=int(event_week),
        before_t=offsets[before],
        before_y=series.scores[before],
        after_t=offsets[after],
        after_y=series.scores[after],
        y_at_event=series.score_at(event_week),
        y_after_event=series.score_at(event_week + 1),
    )


def fit_segment(t: Iterable[float], y: Optional[Iterable[float]] = None) -> LineFit:
    """Ordinary least squares line through ``(t, y)`` points.

    Accepts either two arrays or a single sequence of ``(t, y)`` pairs. The intercept is
    extrapolated to ``t = 0``.

    Raises:
        DegenerateFitError: Fewer than two points or all offsets identical.
    """
    if y is None:
        pairs = np.asarray(list(t), dtype=np.float64).reshape(-1, 2)
        t_arr, y_arr = pairs[:, 0], pairs[:, 1]
    else:
        t_arr = np.asarray(t, dtype=np.float64)
        y_arr = np.asarray(y, dtype=np.float64)
    if t_arr.size < 2:
        raise DegenerateFitError("A line fit needs at least two points")
    t_bar = t_arr.mean()
    y_bar = y_arr.mean()
    dt = t_arr - t_bar
    sxx = float(dt @ dt)
    if sxx == 0.0:
        raise DegenerateFitError("All offsets are identical; slope is undefined")
    beta1 = float(dt @ (y_arr - y_bar)) / sxx
    beta0 = float(y_bar - beta1 * t_bar)
    return LineFit(beta0=beta0, beta1=beta1, n=int(t_arr.size))


def estimate_discontinuity(window: EpisodeWindow, event_type: str = "") -> DiscontinuityOutcome:
    """Fit both segments and take the intercept and slope differences at the event."""
    before = fit_segment(window.before_t, window.before_y)
    after = fit_segment(window.after_t, window.after_y)
    return DiscontinuityOutcome(
        region_id=window.region_id,
        event_type=event_type,
        before_fit=before,
        after_fit=after,
        delta0=after.beta0 - before.beta0,
        delta1=after.beta1 - before.beta1,
        y_at_event=window.y_at_event,
        y_after_event=window.y_after_event,
    )


def _estimate_one(
    panel: Panel, region_id: str, event_week: int, event_type: str, config: WindowConfig
) -> Tuple[str, Any]:
    try:
        window = extract_window(panel, region_id, event_week, config)
        return region_id, (window, estimate_discontinuity(window, event_type))
    except RupturaError as exc:
        logger.debug("Skipping %s: %s", region_id, exc)
        return region_id, exc.message


def batch_estimate(
    panel: Panel,
    events: EventTable,
    event_type: str,
    config: WindowConfig = WindowConfig(),
    *,
    threads: int = 1,
) -> BatchResult:
    """Estimate one discontinuity per region having an ``event_type`` event.

    Regions without panel data or with too few points are reported in ``skipped``; outcomes are
    ordered by region_id regardless of ``threads``.
    """
    targets = events.for_type(event_type)
    skipped: List[SkippedEpisode] = []
    jobs = []
    for region_id, week in targets.items():
        if region_id not in panel:
            skipped.append(SkippedEpisode(region_id, "region not in panel"))
            continue
        jobs.append((region_id, week))
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_estimate_one)(panel, r, w, event_type, config) for r, w in jobs
    )
    outcomes: List[DiscontinuityOutcome] = []
    windows: Dict[str, EpisodeWindow] = {}
    for region_id, result in results:
        if isinstance(result, str):
            skipped.append(SkippedEpisode(region_id, result))
            continue
        window, outcome = result
        windows[region_id] = window
        outcomes.append(outcome)
    outcomes.sort(key=lambda o: o.region_id)
    skipped.sort(key=lambda s: s.region_id)
    logger.info(
        "Estimated %d %s episodes (%d skipped)", len(outcomes), event_type, len(skipped)
    )
    return BatchResult(
        event_type=event_type,
        outcomes=outcomes,
        windows=windows,
        stats=CohortStats.from_outcomes(outcomes),
        skipped=skipped,
    )


def buffer_ablation(
    panel: Panel,
    events: EventTable,
    event_type: str,
    buffers: Sequence[int] = (0, 1, 2),
    config: WindowConfig = WindowConfig(),
    *,
    threads: int = 1,
) -> Dict[int, BatchResult]:
    """Re-run :func:`batch_estimate` once per buffer width."""
    return {
        b: batch_estimate(panel, events, event_type, config.with_buffer(b), threads=threads)
        for b in buffers
    }


def event_profile(
    panel: Panel,
    events: EventTable,
    event_type: str,
    config: WindowConfig = WindowConfig(),
) -> pd.DataFrame:
    """Cohort mean, std and count of the score at each offset ``-T..T`` around the event.

    ``in_buffer`` marks offsets excluded from both fitting segments.
    """
    offsets = np.arange(-config.half_width, config.half_width + 1)
    values: Dict[int, List[float]] = {int(o): [] for o in offsets}
    for region_id, week in events.for_type(event_type).items():
        if region_id not in panel:
            continue
        series = panel.series(region_id).between(
            week - config.half_width, week + config.half_width
        )
        for offset, score in zip((series.weeks - week).tolist(), series.scores.tolist()):
            values[offset].append(score)
    fitted = set(config.before_offsets.tolist()) | set(config.after_offsets.tolist())
    rows = []
    for offset in offsets.tolist():
        arr = np.asarray(values[offset], dtype=np.float64)
        rows.append(
            {
                "offset": offset,
                "mean": float(arr.mean()) if arr.size else float("nan"),
                "std": float(arr.std(ddof=1)) if arr.size > 1 else float("nan"),
                "count": int(arr.size),
                "in_buffer": offset not in fitted,
            }
        )
    return pd.DataFrame(rows)


def save_outcomes(outcomes: Sequence[DiscontinuityOutcome], path: PathLike) -> None:
    pd.DataFrame([o.to_row() for o in outcomes], columns=list(OUTCOME_COLUMNS)).to_csv(
        path, index=False
    )
