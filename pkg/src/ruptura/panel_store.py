"""Region-week panels, events, region metadata and embeddings: load, validate, transform."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ruptura._utils import PathLike, week_index
from ruptura.exceptions import DimensionError, ParseError, ValidationError

logger = logging.getLogger("ruptura.panel_store")

DEFAULT_MIN_USERS = 200
DEFAULT_SEASONAL_LAG = 52
# Relative floor below which a region's score std counts as zero.
_ZERO_VARIANCE_RTOL = 1e-12

PANEL_COLUMNS = ("region_id", "week_index", "score", "n_users")
EVENT_COLUMNS = ("region_id", "event_type", "event_week")
META_COLUMNS = (
    "region_id",
    "education",
    "income",
    "population",
    "area_sq_miles",
    "latitude",
    "longitude",
    "adjacent",
)

_SOCIODEM_RE = re.compile(r"^sociodem_(\d+)$")
_EMBED_RE = re.compile(r"^e_(\d+)$")


def _frozen(values: np.ndarray, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Panel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSeries:
    """One region's observations, ordered by strictly increasing week index."""

    weeks: np.ndarray
    scores: np.ndarray
    n_users: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "weeks", _frozen(self.weeks, np.int64))
        object.__setattr__(self, "scores", _frozen(self.scores, np.float64))
        object.__setattr__(self, "n_users", _frozen(self.n_users, np.int64))
        if not (len(self.weeks) == len(self.scores) == len(self.n_users)):
            raise ValidationError("weeks, scores and n_users must have equal length")
        if len(self.weeks) > 1 and np.any(np.diff(self.weeks) <= 0):
            raise ValidationError("week indices must be strictly increasing", field="week_index")
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("scores must be finite", field="score")
        if np.any(self.n_users < 0):
            raise ValidationError("n_users must be non-negative", field="n_users")

    def __len__(self) -> int:
        return len(self.weeks)

    def select(self, mask: np.ndarray) -> RegionSeries:
        return RegionSeries(self.weeks[mask], self.scores[mask], self.n_users[mask])

    def with_scores(self, scores: np.ndarray) -> RegionSeries:
        return RegionSeries(self.weeks, scores, self.n_users)

    def between(self, first: int, last: int) -> RegionSeries:
        """Observations with ``first <= week <= last``."""
        lo = np.searchsorted(self.weeks, first, side="left")
        hi = np.searchsorted(self.weeks, last, side="right")
        return RegionSeries(self.weeks[lo:hi], self.scores[lo:hi], self.n_users[lo:hi])

    def score_at(self, week: int) -> Optional[float]:
        idx = np.searchsorted(self.weeks, week)
        if idx < len(self.weeks) and self.weeks[idx] == week:
            return float(self.scores[idx])
        return None


@dataclass(frozen=True)
class Panel:
    """Per-region weekly scores: the running variable of every event study.

    Attributes:
        regions: Mapping region_id -> :class:`RegionSeries`, iterated in sorted region order.
        score_name: Name of the score (e.g. ``"anxiety"``).
        transform_log: Transforms applied since loading, in application order.
    """

    regions: Mapping[str, RegionSeries]
    score_name: str
    transform_log: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", {k: self.regions[k] for k in sorted(self.regions)})
        object.__setattr__(self, "transform_log", tuple(self.transform_log))

    @property
    def region_ids(self) -> List[str]:
        return list(self.regions)

    @property
    def n_observations(self) -> int:
        return sum(len(s) for s in self.regions.values())

    def __contains__(self, region_id: object) -> bool:
        return region_id in self.regions

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[str]:
        return iter(self.regions)

    def series(self, region_id: str) -> RegionSeries:
        try:
            return self.regions[region_id]
        except KeyError:
            raise ValidationError(
                f"Region {region_id!r} not in {self.score_name!r} panel", field="region_id"
            ) from None

    def derive(self, regions: Mapping[str, RegionSeries], transform: str) -> Panel:
        """New panel with ``regions`` and ``transform`` appended to the log."""
        return Panel(regions, self.score_name, self.transform_log + (transform,))

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame(
                {
                    "region_id": region_id,
                    "week_index": s.weeks,
                    "score": s.scores,
                    "n_users": s.n_users,
                }
            )
            for region_id, s in self.regions.items()
        ]
        if not frames:
            return pd.DataFrame({c: [] for c in PANEL_COLUMNS})
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, score_name: str) -> Panel:
        """Group a ``region_id, week_index, score, n_users`` frame into a panel."""
        ordered = frame.sort_values(["region_id", "week_index"], kind="mergesort")
        regions: Dict[str, RegionSeries] = {}
        for region_id, group in ordered.groupby("region_id", sort=True):
            regions[str(region_id)] = RegionSeries(
                group["week_index"].to_numpy(),
                group["score"].to_numpy(),
                group["n_users"].to_numpy(),
            )
        return cls(regions, score_name)

    def __repr__(self) -> str:
        return (
            f"Panel(score_name={self.score_name!r}, regions={len(self.regions)}, "
            f"observations={self.n_observations}, transforms={list(self.transform_log)!r})"
        )


# ---------------------------------------------------------------------------
# Events, metadata, embeddings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventTable:
    """At most one event week per (region_id, event_type)."""

    entries: Mapping[Tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "entries", {k: int(self.entries[k]) for k in sorted(self.entries)}
        )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def event_types(self) -> List[str]:
        return sorted({event_type for _, event_type in self.entries})

    def for_type(self, event_type: str) -> Dict[str, int]:
        """region_id -> event_week for one event type, sorted by region_id."""
        return {r: w for (r, t), w in self.entries.items() if t == event_type}

    def get(self, region_id: str, event_type: str) -> Optional[int]:
        return self.entries.get((region_id, event_type))

    def to_frame(self) -> pd.DataFrame:
        rows = [(r, t, w) for (r, t), w in self.entries.items()]
        return pd.DataFrame(rows, columns=list(EVENT_COLUMNS))

    def __repr__(self) -> str:
        return f"EventTable(entries={len(self.entries)}, event_types={self.event_types!r})"


@dataclass(frozen=True)
class RegionMeta:
    """Static description of a region: SES inputs, size, location, neighbours, sociodemographics."""

    region_id: str
    education: float
    income: float
    population: float
    area_sq_miles: float
    latitude: float
    longitude: float
    adjacent_regions: FrozenSet[str] = frozenset()
    sociodemographics: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "adjacent_regions", frozenset(self.adjacent_regions))
        object.__setattr__(
            self, "sociodemographics", tuple(float(v) for v in self.sociodemographics)
        )
        for name in ("education", "income", "population", "area_sq_miles", "latitude", "longitude"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite for {self.region_id!r}", field=name)
        if self.population <= 0:
            raise ValidationError(
                f"population must be positive for {self.region_id!r}", field="population"
            )
        if self.area_sq_miles <= 0:
            raise ValidationError(
                f"area_sq_miles must be positive for {self.region_id!r}", field="area_sq_miles"
            )
        if self.region_id in self.adjacent_regions:
            raise ValidationError(
                f"region {self.region_id!r} lists itself as adjacent", field="adjacent"
            )
        if not all(np.isfinite(self.sociodemographics)):
            raise ValidationError(
                f"sociodemographics must be finite for {self.region_id!r}",
                field="sociodemographics",
            )

    @property
    def urbanicity(self) -> float:
        """Natural log of population density (people per square mile)."""
        return float(np.log(self.population / self.area_sq_miles))


@dataclass(frozen=True)
class EmbeddingTable:
    """Fixed-dimension exogenous vectors keyed by region_id."""

    vectors: Mapping[str, np.ndarray]
    dim: int

    def __post_init__(self) -> None:
        frozen = {}
        for region_id in sorted(self.vectors):
            vec = _frozen(self.vectors[region_id], np.float64)
            if vec.ndim != 1 or vec.shape[0] != self.dim:
                raise DimensionError(
                    f"Embedding for {region_id!r} has dimension {vec.size}, expected {self.dim}",
                    expected=self.dim,
                    got=int(vec.size),
                )
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"Embedding for {region_id!r} has non-finite entries")
            frozen[region_id] = vec
        object.__setattr__(self, "vectors", frozen)

    def __contains__(self, region_id: object) -> bool:
        return region_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, region_id: str) -> Optional[np.ndarray]:
        return self.vectors.get(region_id)

    def __repr__(self) -> str:
        return f"EmbeddingTable(regions={len(self.vectors)}, dim={self.dim})"


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_csv(path: PathLike, required: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty (header required)", path=str(path)) from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV: {exc}", path=str(path)) from exc
    frame.columns = [c.strip() for c in frame.columns]
    frame = frame.fillna("")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"missing required column(s): {', '.join(missing)}", path=str(path))
    return frame


def _line(index: int) -> int:
    # header is line 1
    return int(index) + 2


def _numeric(
    frame: pd.DataFrame,
    column: str,
    path: PathLike,
    *,
    integral: bool = False,
    nonnegative: bool = False,
) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if integral:
        bad |= np.isfinite(values) & (np.floor(values) != values)
    if nonnegative:
        bad |= values < 0
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        kind = "integer" if integral else "number"
        if nonnegative:
            kind = f"non-negative {kind}"
        raise ParseError(
            f"{column} must be a finite {kind}, got {frame[column].iloc[idx]!r}",
            path=str(path),
            line=_line(idx),
        )
    return values.astype(np.int64) if integral else values


def _week_column(
    frame: pd.DataFrame, column: str, path: PathLike, epoch: Optional[date]
) -> np.ndarray:
    if epoch is None:
        return _numeric(frame, column, path, integral=True)
    weeks = np.empty(len(frame), dtype=np.int64)
    for idx, value in enumerate(frame[column]):
        try:
            weeks[idx] = week_index(value, epoch)
        except ValueError:
            raise ParseError(
                f"{column} must be an ISO date, got {value!r}", path=str(path), line=_line(idx)
            ) from None
    return weeks


def _region_ids(frame: pd.DataFrame, path: PathLike) -> pd.Series:
    ids = frame["region_id"].str.strip()
    empty = np.flatnonzero((ids == "").to_numpy())
    if empty.size:
        raise ParseError("region_id is empty", path=str(path), line=_line(empty[0]))
    return ids


def load_panel(path: PathLike, score_name: str, *, epoch: Optional[date] = None) -> Panel:
    """Load a ``region_id,week_index,score,n_users`` CSV into a :class:`Panel`.

    Args:
        path: Panel CSV file.
        score_name: Name recorded on the panel (e.g. ``"anxiety"``).
        epoch: When given, ``week_index`` holds ISO dates converted to weeks since the
            epoch's Monday.

    Raises:
        ParseError: Missing columns, non-numeric values or a duplicate (region, week) row,
            naming the offending line.
    """
    frame = _read_csv(path, PANEL_COLUMNS)
    parsed = pd.DataFrame(
        {
            "region_id": _region_ids(frame, path),
            "week_index": _week_column(frame, "week_index", path, epoch),
            "score": _numeric(frame, "score", path),
            "n_users": _numeric(frame, "n_users", path, integral=True, nonnegative=True),
        }
    )
    dupes = np.flatnonzero(parsed.duplicated(["region_id", "week_index"]).to_numpy())
    if dupes.size:
        row = parsed.iloc[dupes[0]]
        raise ParseError(
            f"duplicate observation for region {row['region_id']!r} week {row['week_index']}",
            path=str(path),
            line=_line(dupes[0]),
        )
    panel = Panel.from_frame(parsed, score_name)
    logger.info("Loaded %s: %d regions, %d observations", path, len(panel), panel.n_observations)
    return panel


def load_events(path: PathLike, *, epoch: Optional[date] = None) -> EventTable:
    """Load a ``region_id,event_type,event_week`` CSV."""
    frame = _read_csv(path, EVENT_COLUMNS)
    ids = _region_ids(frame, path)
    types = frame["event_type"].str.strip()
    weeks = _week_column(frame, "event_week", path, epoch)
    entries: Dict[Tuple[str, str], int] = {}
    for idx, (region_id, event_type, week) in enumerate(zip(ids, types, weeks)):
        if not event_type:
            raise ParseError("event_type is empty", path=str(path), line=_line(idx))
        key = (region_id, event_type)
        if key in entries:
            raise ParseError(
                f"duplicate event {event_type!r} for region {region_id!r}",
                path=str(path),
                line=_line(idx),
            )
        entries[key] = int(week)
    return EventTable(entries)


def _indexed_columns(columns: Iterable[str], pattern: re.Pattern, path: PathLike) -> List[str]:
    found = sorted(
        ((int(m.group(1)), c) for c in columns for m in [pattern.match(c)] if m),
    )
    indices = [i for i, _ in found]
    if indices != list(range(len(indices))):
        raise ParseError(
            f"indexed columns must run contiguously from 0, got {indices}", path=str(path)
        )
    return [c for _, c in found]


def load_region_meta(path: PathLike) -> Dict[str, RegionMeta]:
    """Load region metadata; ``adjacent`` is a ``;``-separated list of region ids."""
    frame = _read_csv(path, META_COLUMNS)
    ids = _region_ids(frame, path)
    socio_cols = _indexed_columns(frame.columns, _SOCIODEM_RE, path)
    numeric = {
        name: _numeric(frame, name, path)
        for name in ("education", "income", "population", "area_sq_miles", "latitude", "longitude")
    }
    socio = np.column_stack([_numeric(frame, c, path) for c in socio_cols]) if socio_cols else None
    meta: Dict[str, RegionMeta] = {}
    for idx, region_id in enumerate(ids):
        if region_id in meta:
            raise ParseError(
                f"duplicate region {region_id!r}", path=str(path), line=_line(idx)
            )
        adjacent = frozenset(a.strip() for a in frame["adjacent"].iloc[idx].split(";") if a.strip())
        try:
            meta[region_id] = RegionMeta(
                region_id=region_id,
                adjacent_regions=adjacent,
                sociodemographics=tuple(socio[idx]) if socio is not None else (),
                **{name: float(values[idx]) for name, values in numeric.items()},
            )
        except ValidationError as exc:
            raise ValidationError(f"line {_line(idx)}: {exc.message}", field=exc.field) from exc
    return dict(sorted(meta.items()))


def load_embeddings(path: PathLike) -> EmbeddingTable:
    """Load a ``region_id,e_0..e_{d-1}`` CSV.

    Raises:
        DimensionError: Rows whose vectors are shorter or longer than the header declares.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise DimensionError(f"embedding rows have inconsistent lengths: {exc}") from exc
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty (header required)", path=str(path)) from None
    frame.columns = [c.strip() for c in frame.columns]
    # short rows come back as NaN
    frame = frame.fillna("")
    if "region_id" not in frame.columns:
        raise ParseError("missing required column(s): region_id", path=str(path))
    cols = _indexed_columns(frame.columns, _EMBED_RE, path)
    if not cols:
        raise ParseError("no embedding columns (e_0, e_1, ...)", path=str(path))
    short = (frame[cols].apply(lambda c: c.str.strip()) == "").any(axis=1).to_numpy()
    if short.any():
        idx = int(np.flatnonzero(short)[0])
        got = int((frame[cols].iloc[idx].str.strip() != "").sum())
        raise DimensionError(
            f"line {_line(idx)}: embedding has {got} values, expected {len(cols)}",
            expected=len(cols),
            got=got,
        )
    ids = _region_ids(frame, path)
    matrix = np.column_stack([_numeric(frame, c, path) for c in cols])
    vectors: Dict[str, np.ndarray] = {}
    for idx, region_id in enumerate(ids):
        if region_id in vectors:
            raise ParseError(f"duplicate region {region_id!r}", path=str(path), line=_line(idx))
        vectors[region_id] = matrix[idx]
    return EmbeddingTable(vectors, dim=len(cols))


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def save_panel(panel: Panel, path: PathLike) -> None:
    panel.to_frame().to_csv(path, index=False)


def save_events(events: EventTable, path: PathLike) -> None:
    events.to_frame().to_csv(path, index=False)


def save_region_meta(meta: Mapping[str, RegionMeta], path: PathLike) -> None:
    rows = []
    for region_id in sorted(meta):
        m = meta[region_id]
        row = {
            "region_id": m.region_id,
            "education": m.education,
            "income": m.income,
            "population": m.population,
            "area_sq_miles": m.area_sq_miles,
            "latitude": m.latitude,
            "longitude": m.longitude,
            "adjacent": ";".join(sorted(m.adjacent_regions)),
        }
        row.update({f"sociodem_{i}": v for i, v in enumerate(m.sociodemographics)})
        rows.append(row)
    pd.DataFrame(rows, columns=_meta_header(meta)).to_csv(path, index=False)


def _meta_header(meta: Mapping[str, RegionMeta]) -> List[str]:
    width = max((len(m.sociodemographics) for m in meta.values()), default=0)
    return list(META_COLUMNS) + [f"sociodem_{i}" for i in range(width)]


def save_embeddings(table: EmbeddingTable, path: PathLike) -> None:
    columns = [f"e_{i}" for i in range(table.dim)]
    frame = pd.DataFrame(
        [table.vectors[r] for r in table.vectors], columns=columns, index=list(table.vectors)
    )
    frame.index.name = "region_id"
    frame.reset_index().to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def filter_reliability(panel: Panel, min_users: int = DEFAULT_MIN_USERS) -> Panel:
    """Keep observations backed by at least ``min_users`` unique users; drop emptied regions."""
    if min_users < 0:
        raise ValidationError("min_users must be >= 0", field="min_users")
    regions: Dict[str, RegionSeries] = {}
    dropped = 0
    for region_id, series in panel.regions.items():
        kept = series.select(series.n_users >= min_users)
        dropped += len(series) - len(kept)
        if len(kept):
            regions[region_id] = kept
    logger.info(
        "Reliability filter (min_users=%d): dropped %d observations, %d regions remain",
        min_users,
        dropped,
        len(regions),
    )
    return panel.derive(regions, f"filter_reliability(min_users={min_users})")


def zscore_per_region(panel: Panel) -> Panel:
    """Standardise each region's scores to mean 0 and population std 1.

    Regions with fewer than two observations or zero variance are dropped with a warning.
    """
    regions: Dict[str, RegionSeries] = {}
    for region_id, series in panel.regions.items():
        std = float(np.std(series.scores)) if len(series) >= 2 else 0.0
        scale = max(1.0, abs(float(np.mean(series.scores)))) if len(series) else 1.0
        if std <= _ZERO_VARIANCE_RTOL * scale or np.ptp(series.scores) == 0.0:
            logger.warning("Dropping region %s: zero score variance", region_id)
            continue
        regions[region_id] = series.with_scores((series.scores - np.mean(series.scores)) / std)
    return panel.derive(regions, "zscore_per_region")


def difference(panel: Panel, lag: int = DEFAULT_SEASONAL_LAG) -> Panel:
    """Replace score(w) by score(w) - score(w - lag); weeks without a lag partner are dropped."""
    if lag < 1:
        raise ValidationError("lag must be >= 1", field="lag")
    regions: Dict[str, RegionSeries] = {}
    for region_id, series in panel.regions.items():
        partners = series.weeks - lag
        pos = np.searchsorted(series.weeks, partners)
        pos_clipped = np.minimum(pos, max(len(series) - 1, 0))
        has_partner = (pos < len(series)) & (series.weeks[pos_clipped] == partners)
        diffs = series.scores[has_partner] - series.scores[pos_clipped[has_partner]]
        regions[region_id] = RegionSeries(
            series.weeks[has_partner], diffs, series.n_users[has_partner]
        )
    return panel.derive(regions, f"difference(lag={lag})")
