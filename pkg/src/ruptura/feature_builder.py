"""Predictor vectors for discontinuity forecasting: P, RC, cov and exog blocks.

Blocks are concatenated in a fixed order:

* ``P``    the before-segment scores, one per expected offset (9 at T=9, b=1)
* ``RC``   the before-segment fit (beta0, beta1)
* ``cov``  the covariate stream's P block followed by its RC block
* ``exog`` the region embedding

Columns are not standardised here; learners fit a scaler on the training split.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ruptura._utils import PathLike, dump_json, load_json
from ruptura.exceptions import (
    ConfigError,
    DimensionError,
    EstimationError,
    InsufficientDataError,
    MissingCovariateError,
    MissingExogError,
    ParseError,
    RupturaError,
)
from ruptura.panel_store import EmbeddingTable
from ruptura.rdd_estimator import (
    DiscontinuityOutcome,
    EpisodeWindow,
    SkippedEpisode,
    WindowConfig,
)

logger = logging.getLogger("ruptura.feature_builder")

BLOCK_ORDER = ("P", "RC", "cov", "exog")
TARGET_COLUMNS = ("delta0", "delta1")


@dataclass(frozen=True)
class FeatureSetSpec:
    """Which feature blocks to use; at least one must be on."""

    use_P: bool = True
    use_RC: bool = True
    use_cov: bool = False
    use_exog: bool = False

    def __post_init__(self) -> None:
        if not (self.use_P or self.use_RC or self.use_cov or self.use_exog):
            raise ConfigError("A feature set needs at least one block", field="features")

    @classmethod
    def parse(cls, text: str) -> FeatureSetSpec:
        """Parse a comma list such as ``"P,RC,cov,exog"`` (case-insensitive, ``+`` also allowed)."""
        names = {n.strip().lower() for n in text.replace("+", ",").split(",") if n.strip()}
        known = {"p", "rc", "cov", "exog"}
        unknown = names - known
        if unknown:
            raise ConfigError(
                f"Unknown feature block(s): {', '.join(sorted(unknown))}", field="features"
            )
        return cls("p" in names, "rc" in names, "cov" in names, "exog" in names)

    @property
    def label(self) -> str:
        """Human-readable name, e.g. ``"cov + exog + P + RC"``."""
        parts = [n for n, on in (("cov", self.use_cov), ("exog", self.use_exog)) if on]
        parts += [n for n, on in (("P", self.use_P), ("RC", self.use_RC)) if on]
        return " + ".join(parts)

    def to_dict(self) -> Dict[str, bool]:
        return {
            "use_P": self.use_P,
            "use_RC": self.use_RC,
            "use_cov": self.use_cov,
            "use_exog": self.use_exog,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FeatureSetSpec:
        return cls(
            bool(data.get("use_P", False)),
            bool(data.get("use_RC", False)),
            bool(data.get("use_cov", False)),
            bool(data.get("use_exog", False)),
        )


@dataclass(frozen=True)
class Block:
    name: str
    offset: int
    length: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


Layout = Tuple[Block, ...]


def build_layout(spec: FeatureSetSpec, config: WindowConfig, embedding_dim: int = 0) -> Layout:
    """Block layout for ``spec``: d = P + 2 RC + (P + 2) cov + d_e exog."""
    n_p = len(config.before_offsets)
    lengths = {"P": n_p, "RC": 2, "cov": n_p + 2, "exog": embedding_dim}
    flags = {"P": spec.use_P, "RC": spec.use_RC, "cov": spec.use_cov, "exog": spec.use_exog}
    blocks: List[Block] = []
    offset = 0
    for name in BLOCK_ORDER:
        if flags[name]:
            blocks.append(Block(name, offset, lengths[name]))
            offset += lengths[name]
    return tuple(blocks)


def layout_fingerprint(layout: Layout) -> str:
    """Short stable hash of a layout; learners refuse inputs with a different one."""
    text = json.dumps([[b.name, b.offset, b.length] for b in layout])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    region_id: str
    x: np.ndarray
    layout: Layout

    def block(self, name: str) -> np.ndarray:
        for b in self.layout:
            if b.name == name:
                return self.x[b.slice]
        raise KeyError(name)


@dataclass
class Dataset:
    """Feature matrix and (delta0, delta1) targets, one row per episode, sorted by region_id.

    Attributes:
        X: ``(n, d)`` predictors.
        targets: ``(n, 2)`` targets, columns ``(delta0, delta1)``.
        region_ids: Row labels.
        spec: Feature set used.
        layout: Block layout shared by every row.
        config: Window geometry the episodes were cut with.
        windows: Episode windows aligned with rows (the forecasting baseline needs them).
        skipped: Episodes left out and why.
    """

    X: np.ndarray
    targets: np.ndarray
    region_ids: List[str]
    spec: FeatureSetSpec
    layout: Layout
    config: WindowConfig = WindowConfig()
    windows: List[EpisodeWindow] = field(default_factory=list)
    skipped: List[SkippedEpisode] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.X.ndim != 2 or self.targets.shape != (self.X.shape[0], 2):
            raise DimensionError("X must be (n, d) and targets (n, 2)")
        if len(self.region_ids) != self.X.shape[0]:
            raise DimensionError("region_ids must align with rows")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.targets))):
            raise DimensionError("Dataset contains non-finite entries")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def fingerprint(self) -> str:
        return layout_fingerprint(self.layout)

    def subset(self, region_ids: Sequence[str]) -> Dataset:
        """Rows whose region is in ``region_ids``, keeping row order."""
        wanted = set(region_ids)
        idx = [i for i, r in enumerate(self.region_ids) if r in wanted]
        return Dataset(
            X=self.X[idx],
            targets=self.targets[idx],
            region_ids=[self.region_ids[i] for i in idx],
            spec=self.spec,
            layout=self.layout,
            config=self.config,
            windows=[self.windows[i] for i in idx] if self.windows else [],
        )

    def __repr__(self) -> str:
        return (
            f"Dataset(rows={len(self)}, features={self.n_features}, spec={self.spec.label!r})"
        )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _history(window: EpisodeWindow, config: WindowConfig) -> np.ndarray:
    expected = config.before_offsets
    if len(window.before_t) != len(expected) or np.any(window.before_t != expected):
        raise InsufficientDataError(
            f"before segment of {window.region_id!r} is missing weeks "
            f"({len(window.before_t)} of {len(expected)} present)",
            segment="before",
            region_id=window.region_id,
        )
    return np.asarray(window.before_y, dtype=np.float64)


def build_features(
    outcome: DiscontinuityOutcome,
    window: EpisodeWindow,
    spec: FeatureSetSpec,
    *,
    cov_outcome: Optional[DiscontinuityOutcome] = None,
    cov_window: Optional[EpisodeWindow] = None,
    embedding: Optional[np.ndarray] = None,
    config: WindowConfig = WindowConfig(),
) -> FeatureVector:
    """Concatenate the blocks ``spec`` asks for, using pre-event information only.

    Raises:
        InsufficientDataError: P (or cov) demanded but the before segment has gaps.
        MissingCovariateError: ``use_cov`` without a covariate episode.
        MissingExogError: ``use_exog`` without an embedding.
    """
    parts: List[np.ndarray] = []
    if spec.use_P:
        parts.append(_history(window, config))
    if spec.use_RC:
        parts.append(np.array([outcome.before_fit.beta0, outcome.before_fit.beta1]))
    if spec.use_cov:
        if cov_outcome is None or cov_window is None:
            raise MissingCovariateError(outcome.region_id)
        parts.append(_history(cov_window, config))
        parts.append(np.array([cov_outcome.before_fit.beta0, cov_outcome.before_fit.beta1]))
    if spec.use_exog:
        if embedding is None:
            raise MissingExogError(outcome.region_id)
        parts.append(np.asarray(embedding, dtype=np.float64))
    x = np.concatenate(parts)
    layout = build_layout(spec, config, len(embedding) if spec.use_exog else 0)
    return FeatureVector(outcome.region_id, x, layout)


def assemble_dataset(
    outcomes: Sequence[DiscontinuityOutcome],
    windows: Mapping[str, EpisodeWindow],
    spec: FeatureSetSpec,
    *,
    cov_outcomes: Optional[Sequence[DiscontinuityOutcome]] = None,
    cov_windows: Optional[Mapping[str, EpisodeWindow]] = None,
    embeddings: Optional[EmbeddingTable] = None,
    config: WindowConfig = WindowConfig(),
) -> Dataset:
    """Build one row per episode passing every availability check, sorted by region_id.

    Raises:
        EstimationError: No episode survives.
    """
    cov_by_region = {o.region_id: o for o in (cov_outcomes or [])}
    cov_windows = cov_windows or {}
    rows: List[FeatureVector] = []
    targets: List[Tuple[float, float]] = []
    kept_windows: List[EpisodeWindow] = []
    skipped: List[SkippedEpisode] = []
    for outcome in sorted(outcomes, key=lambda o: o.region_id):
        region_id = outcome.region_id
        window = windows.get(region_id)
        if window is None:
            skipped.append(SkippedEpisode(region_id, "no episode window"))
            continue
        try:
            vector = build_features(
                outcome,
                window,
                spec,
                cov_outcome=cov_by_region.get(region_id),
                cov_window=cov_windows.get(region_id),
                embedding=embeddings.get(region_id) if embeddings is not None else None,
                config=config,
            )
        except RupturaError as exc:
            logger.warning("Skipping %s: %s", region_id, exc.message)
            skipped.append(SkippedEpisode(region_id, exc.message))
            continue
        rows.append(vector)
        targets.append((outcome.delta0, outcome.delta1))
        kept_windows.append(window)
    if not rows:
        raise EstimationError(f"No episode has every block of {spec.label!r}")
    layout = rows[0].layout
    return Dataset(
        X=np.vstack([r.x for r in rows]),
        targets=np.asarray(targets),
        region_ids=[r.region_id for r in rows],
        spec=spec,
        layout=layout,
        config=config,
        windows=kept_windows,
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _sidecar(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".layout.json")


def save_dataset(dataset: Dataset, path: PathLike) -> Path:
    """Write ``region_id, x_0.., delta0, delta1`` CSV plus a ``.layout.json`` sidecar.

    Returns the sidecar path.
    """
    columns = [f"x_{i}" for i in range(dataset.n_features)]
    frame = pd.DataFrame(dataset.X, columns=columns)
    frame.insert(0, "region_id", dataset.region_ids)
    frame["delta0"] = dataset.targets[:, 0]
    frame["delta1"] = dataset.targets[:, 1]
    frame.to_csv(path, index=False)
    sidecar = _sidecar(path)
    dump_json(
        {
            "spec": dataset.spec.to_dict(),
            "layout": [[b.name, b.offset, b.length] for b in dataset.layout],
            "fingerprint": dataset.fingerprint,
            "window": dataset.config.to_dict(),
            "windows": {
                w.region_id: {
                    "event_week": w.event_week,
                    "before_t": w.before_t,
                    "before_y": w.before_y,
                    "after_t": w.after_t,
                    "after_y": w.after_y,
                }
                for w in dataset.windows
            },
        },
        sidecar,
    )
    return sidecar


def load_dataset(path: PathLike) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise ParseError("dataset layout sidecar not found", path=str(sidecar))
    meta = load_json(sidecar)
    frame = pd.read_csv(path, dtype={"region_id": str})
    x_cols = [c for c in frame.columns if c.startswith("x_")]
    layout = tuple(Block(name, int(offset), int(length)) for name, offset, length in meta["layout"])
    windows = []
    region_ids = frame["region_id"].astype(str).tolist()
    stored = meta.get("windows", {})
    if all(r in stored for r in region_ids):
        for r in region_ids:
            w = stored[r]
            windows.append(
                EpisodeWindow(
                    region_id=r,
                    event_week=int(w["event_week"]),
                    before_t=np.asarray(w["before_t"], dtype=np.int64),
                    before_y=np.asarray(w["before_y"], dtype=np.float64),
                    after_t=np.asarray(w["after_t"], dtype=np.int64),
                    after_y=np.asarray(w["after_y"], dtype=np.float64),
                )
            )
    return Dataset(
        X=frame[x_cols].to_numpy(dtype=np.float64).reshape(len(frame), len(x_cols)),
        targets=frame[list(TARGET_COLUMNS)].to_numpy(dtype=np.float64),
        region_ids=region_ids,
        spec=FeatureSetSpec.from_dict(meta["spec"]),
        layout=layout,
        config=WindowConfig.from_dict(meta.get("window", {})),
        windows=windows,
    )
