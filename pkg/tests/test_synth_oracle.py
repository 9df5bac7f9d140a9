"""Tests for the synthetic panel generator."""
from __future__ import annotations

import numpy as np
import pytest

from ruptura._utils import load_json
from ruptura.exceptions import ConfigError
from ruptura.panel_store import load_embeddings, load_events, load_panel, load_region_meta
from ruptura.synth_oracle import SYNTH_FILES, EffectMap, SynthConfig, generate, save_synth


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_default_event_range_leaves_full_windows():
    config = SynthConfig(n_weeks=104, half_width=9)
    assert config.event_week_range == (10, 93)


def test_config_validation():
    with pytest.raises(ConfigError, match="ar_coefficient"):
        SynthConfig(ar_coefficient=1.0)
    with pytest.raises(ConfigError, match="event_week_range"):
        SynthConfig(event_week_range=(5, 50))
    with pytest.raises(ConfigError, match="missing_rate"):
        SynthConfig(missing_rate=1.0)
    with pytest.raises(ConfigError, match="weights0"):
        SynthConfig(effect_map=EffectMap("linear_in_meta", weights0=(1.0, 2.0)))
    with pytest.raises(ConfigError, match="kind"):
        EffectMap("quadratic")


def test_config_dict_form():
    config = SynthConfig(
        n_regions=7,
        effect_map=EffectMap("constant", 1.0, -0.1, noise=0.2),
        event_week_range=(20, 40),
    )
    assert SynthConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError, match="Unknown synth config keys"):
        SynthConfig.from_dict({"regions": 3})


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def test_generation_is_deterministic_and_thread_independent():
    config = SynthConfig(n_regions=15, seed=3, noise_sigma=0.4, ar_coefficient=0.5)
    a = generate(config, threads=1)
    b = generate(config, threads=4)
    for region_id in a.panel.region_ids:
        np.testing.assert_array_equal(
            a.panel.series(region_id).scores, b.panel.series(region_id).scores
        )
    assert a.truth.to_dict() == b.truth.to_dict()
    assert a.events.entries == b.events.entries


def test_region_streams_do_not_depend_on_cohort_size():
    small = generate(SynthConfig(n_regions=3, seed=9, noise_sigma=0.3))
    large = generate(SynthConfig(n_regions=10, seed=9, noise_sigma=0.3))
    np.testing.assert_array_equal(
        small.panel.series("00002").scores, large.panel.series("00002").scores
    )


def test_noise_free_series_is_piecewise_linear():
    effect = EffectMap("constant", 2.0, -0.1)
    synth = generate(SynthConfig(n_regions=1, seed=1, effect_map=effect))
    truth = synth.truth["00000"]
    series = synth.panel.series("00000")
    s = series.weeks - truth.event_week
    expected = truth.beta0 + truth.beta1 * s + np.where(s >= 0, 2.0 - 0.1 * s, 0.0)
    np.testing.assert_allclose(series.scores, expected, atol=1e-12)
    assert (truth.delta0, truth.delta1) == (2.0, -0.1)


def test_covariate_panel_gets_a_share_of_the_effect():
    effect = EffectMap("constant", 2.0, 0.0)
    synth = generate(
        SynthConfig(n_regions=1, seed=2, effect_map=effect, covariate_effect_share=0.25)
    )
    week = synth.truth["00000"].event_week
    cov = synth.covariate_panel.series("00000")
    jump = cov.score_at(week) - cov.score_at(week - 1)
    slope = cov.score_at(week - 1) - cov.score_at(week - 2)
    assert jump - slope == pytest.approx(0.5, abs=1e-12)


def test_linear_effects_follow_their_basis():
    effect = EffectMap("linear_in_embedding", 0.1, 0.0, weights0=(1.0,) + (0.0,) * 15)
    synth = generate(SynthConfig(n_regions=5, seed=4, effect_map=effect))
    for region_id in synth.panel.region_ids:
        expected = 0.1 + synth.embeddings.get(region_id)[0]
        assert synth.truth[region_id].delta0 == pytest.approx(expected)


def test_missingness_and_ring_adjacency():
    synth = generate(SynthConfig(n_regions=6, seed=5, missing_rate=0.3))
    assert all(len(synth.panel.series(r)) < 104 for r in synth.panel.region_ids)
    assert synth.meta["00000"].adjacent_regions == {"00001", "00005"}
    assert synth.meta["00003"].adjacent_regions == {"00002", "00004"}


def test_event_weeks_within_range():
    config = SynthConfig(n_regions=30, seed=6, event_week_range=(40, 45))
    synth = generate(config)
    weeks = synth.events.for_type("first_case").values()
    assert all(40 <= w <= 45 for w in weeks)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def test_save_synth_writes_loadable_inputs(tmp_path):
    synth = generate(SynthConfig(n_regions=4, seed=7, noise_sigma=0.1))
    paths = save_synth(synth, tmp_path / "synth")
    assert set(paths) == set(SYNTH_FILES)
    panel = load_panel(paths["panel"], "anxiety")
    assert panel.region_ids == synth.panel.region_ids
    np.testing.assert_allclose(
        panel.series("00001").scores, synth.panel.series("00001").scores, atol=1e-12
    )
    assert load_events(paths["events"]).entries == synth.events.entries
    assert load_region_meta(paths["meta"])["00002"].adjacent_regions == {"00001", "00003"}
    assert load_embeddings(paths["embeddings"]).dim == 16
    truth = load_json(paths["truth"])
    assert truth["config"]["seed"] == 7
    assert truth["regions"]["00000"]["event_week"] == synth.truth["00000"].event_week
