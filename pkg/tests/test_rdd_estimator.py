"""Tests for window extraction, line fits and batch discontinuity estimation."""
from __future__ import annotations

import numpy as np
import pytest

from ruptura.exceptions import DegenerateFitError, InsufficientDataError, ValidationError
from ruptura.panel_store import EventTable, Panel, RegionSeries
from ruptura.rdd_estimator import (
    OUTCOME_COLUMNS,
    WindowConfig,
    batch_estimate,
    buffer_ablation,
    estimate_discontinuity,
    event_profile,
    extract_window,
    fit_segment,
    save_outcomes,
)
from ruptura.synth_oracle import EffectMap, SynthConfig, generate


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _piecewise_panel(event_week=50, beta0=1.0, beta1=0.1, delta0=2.0, delta1=-0.3, drop=()):
    weeks = np.array([w for w in range(100) if w not in drop])
    s = (weeks - event_week).astype(float)
    y = beta0 + beta1 * s + np.where(s >= 0, delta0 + delta1 * s, 0.0)
    series = RegionSeries(weeks, y, np.full(len(weeks), 500))
    return Panel({"r1": series}, "anxiety")


def _oracle(n_regions=100, **kw):
    config = SynthConfig(
        n_regions=n_regions,
        seed=11,
        effect_map=EffectMap("linear_in_meta", 0.5, -0.05, (0.3,) * 6, (0.02,) * 6),
        **kw,
    )
    return generate(config)


# ---------------------------------------------------------------------------
# Window geometry
# ---------------------------------------------------------------------------

def test_window_ranges_default():
    config = WindowConfig()
    assert config.before_range == (-9, -1)
    assert config.after_range == (1, 9)
    assert len(config.before_offsets) == 9


def test_window_ranges_without_buffer():
    config = WindowConfig(buffer=0)
    assert config.before_range == (-9, -1)
    assert config.after_range == (0, 9)


def test_window_ranges_wider_buffer():
    config = WindowConfig(buffer=2)
    assert config.before_range == (-9, -2)
    assert config.after_range == (2, 9)


def test_window_config_validation():
    with pytest.raises(ValidationError, match="half_width"):
        WindowConfig(half_width=0)
    with pytest.raises(ValidationError, match="exceed buffer"):
        WindowConfig(half_width=2, buffer=2)
    with pytest.raises(ValidationError, match="min_points"):
        WindowConfig(min_points_per_segment=1)


def test_window_config_dict_form():
    config = WindowConfig(5, 0, 4)
    assert WindowConfig.from_dict(config.to_dict()) == config


# ---------------------------------------------------------------------------
# Extraction and fitting
# ---------------------------------------------------------------------------

def test_extract_window_excludes_buffer():
    window = extract_window(_piecewise_panel(), "r1", 50)
    assert window.before_t.tolist() == list(range(-9, 0))
    assert window.after_t.tolist() == list(range(1, 10))
    assert window.y_at_event == pytest.approx(3.0)
    assert window.y_after_event == pytest.approx(1.0 + 0.1 + 2.0 - 0.3)


def test_extract_window_insufficient_after_segment():
    drop = set(range(51, 58))  # leaves offsets 8 and 9 after the event
    with pytest.raises(InsufficientDataError) as exc_info:
        extract_window(_piecewise_panel(drop=drop), "r1", 50)
    assert exc_info.value.segment == "after"
    assert exc_info.value.region_id == "r1"


def test_extract_window_tolerates_gaps():
    window = extract_window(_piecewise_panel(drop={45, 46, 52}), "r1", 50)
    assert len(window.before_t) == 7
    assert len(window.after_t) == 8


def test_fit_segment_exact_line():
    fit = fit_segment([-3, -2, -1], [1.0, 2.0, 3.0])
    assert fit.beta0 == pytest.approx(4.0)
    assert fit.beta1 == pytest.approx(1.0)
    assert fit.n == 3


def test_fit_segment_accepts_pairs():
    fit = fit_segment([(1, 2.0), (2, 2.5), (3, 3.0)])
    assert fit.beta0 == pytest.approx(1.5)
    assert fit.beta1 == pytest.approx(0.5)


def test_fit_segment_matches_lstsq():
    rng = np.random.default_rng(3)
    t = np.arange(-9, 0, dtype=float)
    y = rng.normal(size=9)
    fit = fit_segment(t, y)
    design = np.column_stack([np.ones_like(t), t])
    expected, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert fit.beta0 == pytest.approx(expected[0], abs=1e-12)
    assert fit.beta1 == pytest.approx(expected[1], abs=1e-12)


def test_fit_segment_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_segment([2, 2, 2], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateFitError):
        fit_segment([1], [1.0])


def test_estimate_discontinuity_recovers_planted_change():
    window = extract_window(_piecewise_panel(), "r1", 50)
    outcome = estimate_discontinuity(window, "first_case")
    assert outcome.delta0 == pytest.approx(2.0, abs=1e-12)
    assert outcome.delta1 == pytest.approx(-0.3, abs=1e-12)
    assert outcome.before_fit.beta0 == pytest.approx(1.0, abs=1e-12)
    assert outcome.event_type == "first_case"


def test_estimate_discontinuity_no_change_is_zero():
    window = extract_window(_piecewise_panel(delta0=0.0, delta1=0.0), "r1", 50)
    outcome = estimate_discontinuity(window)
    assert outcome.delta0 == pytest.approx(0.0, abs=1e-12)
    assert outcome.delta1 == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Batch estimation
# ---------------------------------------------------------------------------

def test_noise_free_oracle_recovery():
    synth = _oracle()
    result = batch_estimate(synth.panel, synth.events, "first_case")
    assert len(result.outcomes) == 100
    assert not result.skipped
    for outcome in result.outcomes:
        truth = synth.truth[outcome.region_id]
        assert abs(outcome.delta0 - truth.delta0) <= 1e-9
        assert abs(outcome.delta1 - truth.delta1) <= 1e-9


def test_buffer_ablation_recovers_truth_for_every_buffer():
    synth = _oracle(n_regions=20)
    runs = buffer_ablation(synth.panel, synth.events, "first_case", (0, 1, 2))
    assert sorted(runs) == [0, 1, 2]
    for b, result in runs.items():
        assert len(result.outcomes) == 20, b
        for outcome in result.outcomes:
            truth = synth.truth[outcome.region_id]
            assert abs(outcome.delta0 - truth.delta0) <= 1e-9
            assert abs(outcome.delta1 - truth.delta1) <= 1e-9
        assert result.stats["delta0"].n == 20


def test_batch_estimate_reports_skips():
    panel = _piecewise_panel()
    events = EventTable({("r1", "first_case"): 50, ("r9", "first_case"): 50, ("r1", "x"): 1})
    result = batch_estimate(panel, events, "first_case")
    assert [o.region_id for o in result.outcomes] == ["r1"]
    assert [(s.region_id, s.reason) for s in result.skipped] == [("r9", "region not in panel")]
    early = batch_estimate(panel, events, "x")
    assert early.outcomes == []
    assert early.skipped[0].region_id == "r1"


def test_batch_estimate_empty_events_gives_empty_stats():
    result = batch_estimate(_piecewise_panel(), EventTable({}), "first_case")
    assert result.outcomes == []
    assert result.stats.is_empty
    assert list(result.to_frame().columns) == list(OUTCOME_COLUMNS)


def test_batch_estimate_independent_of_threads():
    synth = generate(SynthConfig(n_regions=30, seed=5, noise_sigma=0.5, ar_coefficient=0.3))
    one = batch_estimate(synth.panel, synth.events, "first_case", threads=1)
    many = batch_estimate(synth.panel, synth.events, "first_case", threads=4)
    assert [o.to_row() for o in one.outcomes] == [o.to_row() for o in many.outcomes]


def test_cohort_stats_use_sample_std():
    synth = generate(SynthConfig(n_regions=10, seed=2, noise_sigma=0.5))
    result = batch_estimate(synth.panel, synth.events, "first_case")
    deltas = np.array([o.delta0 for o in result.outcomes])
    row = result.stats["delta0"]
    assert row.mean == pytest.approx(deltas.mean())
    assert row.std == pytest.approx(deltas.std(ddof=1))
    assert row.median == pytest.approx(np.median(deltas))


def test_batch_result_unpacks():
    outcomes, stats = batch_estimate(_piecewise_panel(), EventTable({("r1", "e"): 50}), "e")
    assert len(outcomes) == 1
    assert stats["delta0"].mean == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# Supplementary outputs
# ---------------------------------------------------------------------------

def test_event_profile_marks_buffer():
    profile = event_profile(_piecewise_panel(), EventTable({("r1", "e"): 50}), "e")
    assert profile["offset"].tolist() == list(range(-9, 10))
    assert profile.loc[profile["offset"] == 0, "in_buffer"].item()
    assert not profile.loc[profile["offset"] == 1, "in_buffer"].item()
    assert profile["count"].tolist() == [1] * 19
    assert profile.loc[profile["offset"] == 0, "mean"].item() == pytest.approx(3.0)


def test_save_outcomes_writes_header_when_empty(tmp_path):
    path = tmp_path / "outcomes.csv"
    save_outcomes([], path)
    assert path.read_text().strip() == ",".join(OUTCOME_COLUMNS)
