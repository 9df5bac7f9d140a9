"""Randomized control events: the placebo validity check for the discontinuity estimator."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from ruptura.exceptions import EstimationError, RupturaError, ValidationError
from ruptura.panel_store import Panel
from ruptura.rdd_estimator import (
    SkippedEpisode,
    WindowConfig,
    estimate_discontinuity,
    extract_window,
)

logger = logging.getLogger("ruptura.placebo")

DEFAULT_EPISODES = 5000
# give up after this many draws per requested episode
_MAX_DRAWS_PER_EPISODE = 20
_CHUNK = 256


@dataclass(frozen=True)
class PlaceboSummary:
    """Mean and spread of discontinuities estimated at random event weeks."""

    n_episodes: int
    mean_delta0: float
    std_delta0: float
    mean_delta1: float
    std_delta1: float
    seed: int
    half_width: int = 9
    n_draws: int = 0

    def to_dict(self) -> Dict[str, float]:
        return {
            "n_episodes": self.n_episodes,
            "mean_delta0": self.mean_delta0,
            "std_delta0": self.std_delta0,
            "mean_delta1": self.mean_delta1,
            "std_delta1": self.std_delta1,
            "seed": self.seed,
            "half_width": self.half_width,
            "n_draws": self.n_draws,
        }

    def __repr__(self) -> str:
        return (
            f"PlaceboSummary(n={self.n_episodes}, delta0={self.mean_delta0:+.4f}"
            f"±{self.std_delta0:.4f}, delta1={self.mean_delta1:+.4f}±{self.std_delta1:.4f})"
        )


@dataclass(frozen=True)
class PlaceboDraw:
    """Random event weeks as a multiset of (region_id, event_week)."""

    events: List[Tuple[str, int]]
    skipped: List[SkippedEpisode] = field(default_factory=list)


def eligible_range(panel: Panel, region_id: str, config: WindowConfig) -> Optional[Tuple[int, int]]:
    """Inclusive week range whose full ``-T..T`` window lies inside the region's observed span."""
    series = panel.series(region_id)
    if not len(series):
        return None
    lo = int(series.weeks[0]) + config.half_width
    hi = int(series.weeks[-1]) - config.half_width
    return (lo, hi) if lo <= hi else None


def randomize_events(
    panel: Panel,
    n_per_region: int,
    config: WindowConfig = WindowConfig(),
    seed: int = 0,
) -> PlaceboDraw:
    """Draw ``n_per_region`` uniform event weeks per region from its eligible range.

    Each region draws from its own generator keyed by (seed, region position), so the result
    depends only on the seed and the panel.
    """
    if n_per_region < 1:
        raise ValidationError("n_per_region must be >= 1", field="n_per_region")
    events: List[Tuple[str, int]] = []
    skipped: List[SkippedEpisode] = []
    for index, region_id in enumerate(panel.region_ids):
        span = eligible_range(panel, region_id, config)
        if span is None:
            skipped.append(SkippedEpisode(region_id, "no week with a full observable window"))
            continue
        rng = np.random.default_rng([seed, index])
        weeks = rng.integers(span[0], span[1] + 1, size=n_per_region)
        events.extend((region_id, int(w)) for w in weeks)
    return PlaceboDraw(events, skipped)


def _draw_episode(
    panel: Panel,
    eligible: Sequence[Tuple[str, int, int]],
    index: int,
    seed: int,
    config: WindowConfig,
) -> Optional[Tuple[float, float]]:
    rng = np.random.default_rng([seed, index])
    region_id, lo, hi = eligible[int(rng.integers(len(eligible)))]
    week = int(rng.integers(lo, hi + 1))
    try:
        outcome = estimate_discontinuity(extract_window(panel, region_id, week, config))
    except RupturaError as exc:
        logger.debug("Placebo draw %d (%s week %d) skipped: %s", index, region_id, week, exc)
        return None
    return outcome.delta0, outcome.delta1


def placebo_run(
    panel: Panel,
    n_total_episodes: int = DEFAULT_EPISODES,
    config: WindowConfig = WindowConfig(),
    seed: int = 0,
    *,
    threads: int = 1,
) -> PlaceboSummary:
    """Estimate discontinuities at random event weeks until ``n_total_episodes`` succeed.

    Regions are sampled with replacement, then a week uniformly within the region's eligible
    range. Draw ``i`` uses its own generator keyed by (seed, i), and successes are kept in draw
    order, so ``threads`` never changes the result.

    Raises:
        EstimationError: No draw could be estimated.
    """
    if n_total_episodes < 1:
        raise ValidationError("n_total_episodes must be >= 1", field="n_total_episodes")
    eligible = []
    for region_id in panel.region_ids:
        span = eligible_range(panel, region_id, config)
        if span is not None:
            eligible.append((region_id, span[0], span[1]))
    if not eligible:
        raise EstimationError("No region has a week with a full observable window")

    deltas: List[Tuple[float, float]] = []
    max_draws = n_total_episodes * _MAX_DRAWS_PER_EPISODE
    draws = 0
    with Parallel(n_jobs=threads, prefer="threads") as parallel:
        while len(deltas) < n_total_episodes and draws < max_draws:
            chunk = range(draws, min(draws + _CHUNK, max_draws))
            results = parallel(
                delayed(_draw_episode)(panel, eligible, i, seed, config) for i in chunk
            )
            for result in results:
                draws += 1
                if result is not None:
                    deltas.append(result)
                    if len(deltas) == n_total_episodes:
                        break
    if not deltas:
        raise EstimationError("No placebo episode could be estimated")
    if len(deltas) < n_total_episodes:
        logger.warning(
            "Placebo eligibility exhausted: %d of %d episodes after %d draws",
            len(deltas),
            n_total_episodes,
            draws,
        )
    arr = np.asarray(deltas, dtype=np.float64)
    ddof = 1 if len(arr) > 1 else 0
    summary = PlaceboSummary(
        n_episodes=len(arr),
        mean_delta0=float(arr[:, 0].mean()),
        std_delta0=float(arr[:, 0].std(ddof=ddof)),
        mean_delta1=float(arr[:, 1].mean()),
        std_delta1=float(arr[:, 1].std(ddof=ddof)),
        seed=seed,
        half_width=config.half_width,
        n_draws=draws,
    )
    logger.info("Placebo: %r", summary)
    return summary


def placebo_by_window(
    panel: Panel,
    n_total_episodes: int,
    half_widths: Sequence[int] = (5, 9, 15),
    config: WindowConfig = WindowConfig(),
    seed: int = 0,
    *,
    threads: int = 1,
) -> Dict[int, PlaceboSummary]:
    """One :func:`placebo_run` per half-width, sharing seed, buffer and minimum points."""
    return {
        t: placebo_run(
            panel,
            n_total_episodes,
            WindowConfig(t, config.buffer, config.min_points_per_segment),
            seed,
            threads=threads,
        )
        for t in half_widths
    }
