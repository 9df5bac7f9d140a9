"""Internal utilities."""
from __future__ import annotations

import hashlib
import json
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

PathLike = Union[str, Path]


def parse_date(value: Optional[str]) -> Optional[date]:
    """Parse an ISO 8601 date or datetime string, handling Z suffix for Python 3.9+."""
    if not value:
        return None
    text = str(value).strip()
    if len(text) == 10:
        return date.fromisoformat(text)
    return datetime.fromisoformat(text.replace("Z", "+00:00")).date()


def week_index(value: str, epoch: date) -> int:
    """Whole weeks between the Monday of ``epoch``'s week and the date in ``value``.

    A date falling anywhere inside week ``w`` maps to ``w``.
    """
    day = parse_date(value)
    if day is None:
        raise ValueError("empty date")
    monday = epoch - timedelta(days=epoch.weekday())
    return (day - monday).days // 7


def file_digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes."""
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return None
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def dump_json(data: Any, path: PathLike) -> None:
    """Write ``data`` as sorted, indented JSON (stable bytes for identical input)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: PathLike) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
