"""Synthetic region panels with planted discontinuities, for checking every estimator end to end."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from ruptura._utils import PathLike, dump_json
from ruptura.exceptions import ConfigError
from ruptura.panel_store import (
    DEFAULT_MIN_USERS,
    EmbeddingTable,
    EventTable,
    Panel,
    RegionMeta,
    RegionSeries,
    save_embeddings,
    save_events,
    save_panel,
    save_region_meta,
)

logger = logging.getLogger("ruptura.synth_oracle")

EFFECT_KINDS = ("zero", "constant", "linear_in_meta", "linear_in_embedding", "linear_in_trend")
SEASONAL_PERIOD = 52
DEFAULT_EVENT_TYPE = "first_case"
DEFAULT_SCORE_NAME = "anxiety"
DEFAULT_COVARIATE_NAME = "depression"


@dataclass(frozen=True)
class EffectMap:
    """How each region's planted (delta0, delta1) is produced.

    * ``zero``: no effect.
    * ``constant``: every region gets ``(delta0, delta1)``.
    * ``linear_in_meta``: ``delta0 + weights0 . sociodemographics`` (same for delta1).
    * ``linear_in_embedding``: as above against the region embedding.
    * ``linear_in_trend``: as above against the pre-event trend ``(beta0, beta1)``.

    ``noise`` adds independent Gaussian noise to each planted effect.
    """

    kind: str = "zero"
    delta0: float = 0.0
    delta1: float = 0.0
    weights0: Tuple[float, ...] = ()
    weights1: Tuple[float, ...] = ()
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in EFFECT_KINDS:
            raise ConfigError(
                f"effect_map kind must be one of {EFFECT_KINDS}, got {self.kind!r}",
                field="effect_map",
            )
        object.__setattr__(self, "weights0", tuple(float(w) for w in self.weights0))
        object.__setattr__(self, "weights1", tuple(float(w) for w in self.weights1))
        if self.noise < 0:
            raise ConfigError("effect noise must be >= 0", field="effect_map.noise")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "delta0": self.delta0,
            "delta1": self.delta1,
            "weights0": list(self.weights0),
            "weights1": list(self.weights1),
            "noise": self.noise,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EffectMap:
        unknown = set(data) - {"kind", "delta0", "delta1", "weights0", "weights1", "noise"}
        if unknown:
            raise ConfigError(f"Unknown effect_map keys: {sorted(unknown)}", field="effect_map")
        return cls(
            kind=data.get("kind", "zero"),
            delta0=float(data.get("delta0", 0.0)),
            delta1=float(data.get("delta1", 0.0)),
            weights0=tuple(data.get("weights0", ())),
            weights1=tuple(data.get("weights1", ())),
            noise=float(data.get("noise", 0.0)),
        )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the generating process.

    Attributes:
        n_regions: Number of regions, ids ``00000``, ``00001``, ...
        n_weeks: Weeks ``0..n_weeks-1`` observed per region.
        noise_sigma: Innovation standard deviation of the AR(1) noise.
        ar_coefficient: AR(1) coefficient, in (-1, 1).
        seasonal_amplitude: Amplitude of a period-52 sinusoid with a per-region phase.
        event_week_range: Inclusive range event weeks are drawn from; must leave at least
            ``half_width + 1`` weeks on each side. Defaults to the widest such range.
        effect_map: Planted effect, see :class:`EffectMap`.
        missing_rate: Probability an observation is dropped.
        seed: Master seed; region ``i`` draws from its own stream keyed by ``(seed, i)``.
        half_width: Window half-width the event range must accommodate.
        embedding_dim: Dimension of the generated region embeddings.
        sociodem_dim: Number of sociodemographic columns in the generated metadata.
        trend_intercept_sd: Spread of the pre-event intercepts beta0.
        trend_slope_sd: Spread of the pre-event slopes beta1.
        covariate_effect_share: Fraction of the planted effect the covariate panel receives.
    """

    n_regions: int = 100
    n_weeks: int = 104
    noise_sigma: float = 0.0
    ar_coefficient: float = 0.0
    seasonal_amplitude: float = 0.0
    event_week_range: Optional[Tuple[int, int]] = None
    effect_map: EffectMap = field(default_factory=EffectMap)
    missing_rate: float = 0.0
    seed: int = 0
    half_width: int = 9
    embedding_dim: int = 16
    sociodem_dim: int = 6
    trend_intercept_sd: float = 1.0
    trend_slope_sd: float = 0.05
    covariate_effect_share: float = 0.5
    min_users: int = DEFAULT_MIN_USERS
    max_users: int = 2000
    event_type: str = DEFAULT_EVENT_TYPE
    score_name: str = DEFAULT_SCORE_NAME
    covariate_name: str = DEFAULT_COVARIATE_NAME

    def __post_init__(self) -> None:
        if self.n_regions < 1:
            raise ConfigError("n_regions must be >= 1", field="n_regions")
        if self.half_width < 1:
            raise ConfigError("half_width must be >= 1", field="half_width")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0", field="noise_sigma")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise ConfigError("ar_coefficient must be in (-1, 1)", field="ar_coefficient")
        if self.seasonal_amplitude < 0:
            raise ConfigError("seasonal_amplitude must be >= 0", field="seasonal_amplitude")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must be in [0, 1)", field="missing_rate")
        if self.embedding_dim < 1 or self.sociodem_dim < 1:
            raise ConfigError("embedding_dim and sociodem_dim must be >= 1", field="embedding_dim")
        if not 0 < self.min_users <= self.max_users:
            raise ConfigError("need 0 < min_users <= max_users", field="min_users")
        lo_limit = self.half_width + 1
        hi_limit = self.n_weeks - 1 - (self.half_width + 1)
        if self.event_week_range is None:
            object.__setattr__(self, "event_week_range", (lo_limit, hi_limit))
        lo, hi = (int(v) for v in self.event_week_range)
        object.__setattr__(self, "event_week_range", (lo, hi))
        if lo > hi or lo < lo_limit or hi > hi_limit:
            raise ConfigError(
                f"event_week_range {self.event_week_range} must lie within "
                f"[{lo_limit}, {hi_limit}] for n_weeks={self.n_weeks}, "
                f"half_width={self.half_width}",
                field="event_week_range",
            )
        expected = {
            "linear_in_meta": self.sociodem_dim,
            "linear_in_embedding": self.embedding_dim,
            "linear_in_trend": 2,
        }.get(self.effect_map.kind)
        for name in ("weights0", "weights1"):
            weights = getattr(self.effect_map, name)
            if weights and len(weights) != expected:
                raise ConfigError(
                    f"effect_map.{name} has {len(weights)} weights, expected {expected}",
                    field=f"effect_map.{name}",
                )

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if name == "effect_map":
                value = value.to_dict()
            elif name == "event_week_range":
                value = list(value)
            out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SynthConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown synth config keys: {sorted(unknown)}", field="config")
        kwargs = dict(data)
        if "effect_map" in kwargs:
            kwargs["effect_map"] = EffectMap.from_dict(kwargs["effect_map"])
        if kwargs.get("event_week_range") is not None:
            kwargs["event_week_range"] = tuple(kwargs["event_week_range"])
        return cls(**kwargs)


@dataclass(frozen=True)
class RegionTruth:
    delta0: float
    delta1: float
    beta0: float
    beta1: float
    event_week: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "delta0": self.delta0,
            "delta1": self.delta1,
            "beta0": self.beta0,
            "beta1": self.beta1,
            "event_week": self.event_week,
        }


@dataclass(frozen=True)
class GroundTruth:
    """Planted effects and pre-event trends per region."""

    regions: Mapping[str, RegionTruth]

    def __getitem__(self, region_id: str) -> RegionTruth:
        return self.regions[region_id]

    def __len__(self) -> int:
        return len(self.regions)

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {r: t.to_dict() for r, t in self.regions.items()}


@dataclass(frozen=True)
class SynthResult:
    config: SynthConfig
    panel: Panel
    covariate_panel: Panel
    events: EventTable
    meta: Dict[str, RegionMeta]
    embeddings: EmbeddingTable
    truth: GroundTruth


def _ar1_noise(rng: np.random.Generator, n: int, sigma: float, phi: float) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(n)
    shocks = rng.normal(0.0, sigma, size=n)
    out = np.empty(n)
    out[0] = shocks[0] / np.sqrt(1.0 - phi**2)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + shocks[i]
    return out


def _series(
    rng: np.random.Generator,
    config: SynthConfig,
    event_week: int,
    beta0: float,
    beta1: float,
    delta0: float,
    delta1: float,
) -> RegionSeries:
    weeks = np.arange(config.n_weeks)
    s = (weeks - event_week).astype(np.float64)
    after = s >= 0
    y = beta0 + beta1 * s + np.where(after, delta0 + delta1 * s, 0.0)
    if config.seasonal_amplitude > 0:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        y = y + config.seasonal_amplitude * np.sin(2.0 * np.pi * weeks / SEASONAL_PERIOD + phase)
    y = y + _ar1_noise(rng, config.n_weeks, config.noise_sigma, config.ar_coefficient)
    n_users = rng.integers(config.min_users, config.max_users + 1, size=config.n_weeks)
    keep = rng.random(config.n_weeks) >= config.missing_rate
    return RegionSeries(weeks[keep], y[keep], n_users[keep])


def _planted_effect(
    rng: np.random.Generator,
    effect: EffectMap,
    socio: np.ndarray,
    embedding: np.ndarray,
    trend: np.ndarray,
) -> Tuple[float, float]:
    basis = {
        "linear_in_meta": socio,
        "linear_in_embedding": embedding,
        "linear_in_trend": trend,
    }.get(effect.kind)
    if effect.kind == "zero":
        d0 = d1 = 0.0
    else:
        d0, d1 = effect.delta0, effect.delta1
        if basis is not None:
            if effect.weights0:
                d0 += float(np.dot(effect.weights0, basis))
            if effect.weights1:
                d1 += float(np.dot(effect.weights1, basis))
    if effect.noise > 0:
        d0 += float(rng.normal(0.0, effect.noise))
        d1 += float(rng.normal(0.0, effect.noise))
    return d0, d1


def _region(config: SynthConfig, index: int) -> Dict[str, Any]:
    rng = np.random.default_rng([config.seed, index])
    region_id = f"{index:05d}"
    lo, hi = config.event_week_range
    event_week = int(rng.integers(lo, hi + 1))
    beta0 = float(rng.normal(0.0, config.trend_intercept_sd))
    beta1 = float(rng.normal(0.0, config.trend_slope_sd))
    socio = rng.normal(0.0, 1.0, size=config.sociodem_dim)
    embedding = rng.normal(0.0, 1.0, size=config.embedding_dim)
    delta0, delta1 = _planted_effect(
        rng, config.effect_map, socio, embedding, np.array([beta0, beta1])
    )
    series = _series(rng, config, event_week, beta0, beta1, delta0, delta1)
    cov_series = _series(
        rng,
        config,
        event_week,
        float(rng.normal(0.0, config.trend_intercept_sd)),
        float(rng.normal(0.0, config.trend_slope_sd)),
        config.covariate_effect_share * delta0,
        config.covariate_effect_share * delta1,
    )
    n = config.n_regions
    neighbours = {f"{(index - 1) % n:05d}", f"{(index + 1) % n:05d}"} - {region_id}
    meta = RegionMeta(
        region_id=region_id,
        education=float(rng.normal(0.3, 0.1)),
        income=float(rng.lognormal(10.8, 0.3)),
        population=float(rng.lognormal(10.5, 1.0)),
        area_sq_miles=float(rng.uniform(200.0, 2000.0)),
        latitude=float(rng.uniform(25.0, 49.0)),
        longitude=float(rng.uniform(-124.0, -67.0)),
        adjacent_regions=frozenset(neighbours),
        sociodemographics=tuple(socio),
    )
    return {
        "region_id": region_id,
        "series": series,
        "cov_series": cov_series,
        "meta": meta,
        "embedding": embedding,
        "truth": RegionTruth(delta0, delta1, beta0, beta1, event_week),
    }


def generate(config: SynthConfig, *, threads: int = 1) -> SynthResult:
    """Draw a synthetic cohort. Deterministic in ``config``; ``threads`` never changes output."""
    regions: List[Dict[str, Any]] = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_region)(config, i) for i in range(config.n_regions)
    )
    panel = Panel({r["region_id"]: r["series"] for r in regions}, config.score_name)
    covariate_panel = Panel(
        {r["region_id"]: r["cov_series"] for r in regions}, config.covariate_name
    )
    events = EventTable(
        {(r["region_id"], config.event_type): r["truth"].event_week for r in regions}
    )
    meta = {r["region_id"]: r["meta"] for r in regions}
    embeddings = EmbeddingTable(
        {r["region_id"]: r["embedding"] for r in regions}, dim=config.embedding_dim
    )
    truth = GroundTruth({r["region_id"]: r["truth"] for r in regions})
    logger.info(
        "Generated %d regions x %d weeks (effect=%s, sigma=%g, phi=%g, missing=%g)",
        config.n_regions,
        config.n_weeks,
        config.effect_map.kind,
        config.noise_sigma,
        config.ar_coefficient,
        config.missing_rate,
    )
    return SynthResult(config, panel, covariate_panel, events, meta, embeddings, truth)


SYNTH_FILES = {
    "panel": "panel.csv",
    "covariate_panel": "covariate_panel.csv",
    "events": "events.csv",
    "meta": "region_meta.csv",
    "embeddings": "embeddings.csv",
    "truth": "truth.json",
}


def save_synth(result: SynthResult, out_dir: PathLike) -> Dict[str, Path]:
    """Write the four CSV inputs, the covariate panel and ``truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {key: out / name for key, name in SYNTH_FILES.items()}
    save_panel(result.panel, paths["panel"])
    save_panel(result.covariate_panel, paths["covariate_panel"])
    save_events(result.events, paths["events"])
    save_region_meta(result.meta, paths["meta"])
    save_embeddings(result.embeddings, paths["embeddings"])
    dump_json(
        {"config": result.config.to_dict(), "regions": result.truth.to_dict()}, paths["truth"]
    )
    return paths
