"""ruptura exceptions. All extend RupturaError."""
from __future__ import annotations

from typing import Any, Dict, Optional


class RupturaError(Exception):
    """Base exception for all ruptura errors.

    Attributes:
        message: Human-readable error description.
        error_code: Machine-readable error code (e.g. ``"PARSE_ERROR"``).
        details: Additional structured error context.
        exit_code: Process exit status the CLI uses for this error.
    """

    exit_code = 1

    def __init__(
        self,
        message: str,
        error_code: str = "RUPTURA_ERROR",
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(message)

    def __str__(self) -> str:
        return f"[{self.error_code}] {self.message}"

    def __repr__(self) -> str:
        return f"{type(self).__name__}(message={self.message!r}, error_code={self.error_code!r})"

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.error_code, "message": self.message, "details": self.details}


class ParseError(RupturaError):
    """Malformed input file.

    Attributes:
        path: File that failed to parse.
        line: 1-based line number of the offending row (header is line 1), if known.
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        details: Dict[str, Any] = {}
        if path is not None:
            details["path"] = path
        if line is not None:
            details["line"] = line
            message = f"line {line}: {message}"
        super().__init__(message, "PARSE_ERROR", details)


class ValidationError(RupturaError):
    """A value violates a domain invariant.

    Attributes:
        field: The field that failed validation, if available.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        details = {"field": field} if field else {}
        super().__init__(message, "VALIDATION_ERROR", details)


class ConfigError(RupturaError):
    """Invalid configuration or hyperparameter. Reported by the CLI as a usage error."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        details = {"field": field} if field else {}
        super().__init__(message, "CONFIG_ERROR", details)


class DimensionError(RupturaError):
    """Vectors that must share a dimension do not."""

    def __init__(self, message: str, expected: Optional[int] = None, got: Optional[int] = None):
        self.expected = expected
        self.got = got
        details = {}
        if expected is not None:
            details["expected"] = expected
        if got is not None:
            details["got"] = got
        super().__init__(message, "DIMENSION_ERROR", details)


class InsufficientDataError(RupturaError):
    """Too few observations to fit an event window segment.

    Attributes:
        segment: ``"before"``, ``"after"`` or ``"region"``.
        region_id: Region the window was extracted for.
    """

    def __init__(self, message: str, segment: str, region_id: Optional[str] = None):
        self.segment = segment
        self.region_id = region_id
        details: Dict[str, Any] = {"segment": segment}
        if region_id is not None:
            details["region_id"] = region_id
        super().__init__(message, "INSUFFICIENT_DATA", details)


class DegenerateFitError(RupturaError):
    """A least-squares problem has no unique solution (e.g. all offsets identical)."""

    def __init__(self, message: str = "Degenerate least-squares problem"):
        super().__init__(message, "DEGENERATE_FIT")


class MissingExogError(RupturaError):
    """No exogenous embedding for a region whose features demand one."""

    def __init__(self, region_id: str):
        self.region_id = region_id
        super().__init__(
            f"No exogenous embedding for region {region_id!r}",
            "MISSING_EXOG",
            {"region_id": region_id},
        )


class MissingCovariateError(RupturaError):
    """No covariate episode for a region whose features demand one."""

    def __init__(self, region_id: str):
        self.region_id = region_id
        super().__init__(
            f"No covariate episode for region {region_id!r}",
            "MISSING_COVARIATE",
            {"region_id": region_id},
        )


class LayoutError(RupturaError):
    """Feature layout at prediction time differs from the layout seen in training."""

    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        super().__init__(
            f"Feature layout mismatch: model expects {expected}, got {got}",
            "LAYOUT_MISMATCH",
            {"expected": expected, "got": got},
        )


class EstimationError(RupturaError):
    """An estimation step produced nothing usable (no episodes, empty match set, ...)."""

    def __init__(self, message: str):
        super().__init__(message, "ESTIMATION_ERROR")
