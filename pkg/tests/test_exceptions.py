"""Tests for the exception hierarchy and shared helpers."""
from __future__ import annotations

import json
import math
from datetime import date

import numpy as np
import pytest

from ruptura import __version__
from ruptura._utils import dump_json, file_digest, load_json, parse_date, to_jsonable, week_index
from ruptura.exceptions import (
    ConfigError,
    DegenerateFitError,
    DimensionError,
    EstimationError,
    InsufficientDataError,
    LayoutError,
    MissingCovariateError,
    MissingExogError,
    ParseError,
    RupturaError,
    ValidationError,
)


# ---------------------------------------------------------------------------
# Version
# ---------------------------------------------------------------------------

def test_version():
    assert __version__, "Version should not be empty"
    parts = __version__.split(".")
    assert len(parts) >= 2, f"Version should be semver, got: {__version__}"


# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------

def test_all_exceptions_inherit_from_base():
    errors = [
        ParseError("bad"),
        ValidationError("bad"),
        ConfigError("bad"),
        DimensionError("bad"),
        InsufficientDataError("bad", segment="before"),
        DegenerateFitError(),
        MissingExogError("00001"),
        MissingCovariateError("00001"),
        LayoutError(expected="abc", got="def"),
        EstimationError("bad"),
    ]
    for err in errors:
        assert isinstance(err, RupturaError)
        assert isinstance(err, Exception)


def test_error_str_and_repr():
    err = ValidationError("half_width must be >= 1", field="half_width")
    assert str(err) == "[VALIDATION_ERROR] half_width must be >= 1"
    assert repr(err) == (
        "ValidationError(message='half_width must be >= 1', error_code='VALIDATION_ERROR')"
    )
    assert err.details == {"field": "half_width"}


def test_parse_error_names_path_and_line():
    err = ParseError("score is not numeric", path="panel.csv", line=7)
    assert err.error_code == "PARSE_ERROR"
    assert err.message == "line 7: score is not numeric"
    assert err.details == {"path": "panel.csv", "line": 7}


def test_config_error_is_a_usage_error():
    assert ConfigError("bad").exit_code == 2
    assert ValidationError("bad").exit_code == 1
    assert EstimationError("bad").exit_code == 1


def test_error_codes():
    assert InsufficientDataError("few", "after", "00002").details == {
        "segment": "after",
        "region_id": "00002",
    }
    assert DegenerateFitError().error_code == "DEGENERATE_FIT"
    assert MissingExogError("r1").error_code == "MISSING_EXOG"
    assert MissingCovariateError("r1").error_code == "MISSING_COVARIATE"
    assert LayoutError("a", "b").error_code == "LAYOUT_MISMATCH"
    assert DimensionError("d", expected=3, got=2).details == {"expected": 3, "got": 2}


def test_to_dict_is_json_ready():
    err = LayoutError(expected="9 columns", got="11 columns")
    payload = json.loads(json.dumps(err.to_dict()))
    assert payload["error"] == "LAYOUT_MISMATCH"
    assert payload["details"] == {"expected": "9 columns", "got": "11 columns"}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def test_parse_date():
    assert parse_date("2020-03-02") == date(2020, 3, 2)
    assert parse_date("2020-03-02T10:00:00Z") == date(2020, 3, 2)
    assert parse_date(None) is None
    assert parse_date("") is None


def test_week_index_counts_from_epoch_monday():
    epoch = date(2020, 1, 1)  # a Wednesday; its Monday is 2019-12-30
    assert week_index("2019-12-30", epoch) == 0
    assert week_index("2020-01-05", epoch) == 0
    assert week_index("2020-01-06", epoch) == 1
    assert week_index("2019-12-29", epoch) == -1


def test_to_jsonable_handles_numpy_and_non_finite():
    data = {
        "a": np.float64(1.5),
        "b": np.int64(3),
        "c": np.array([1.0, float("nan")]),
        "d": float("inf"),
        "e": (1, 2),
        5: "key",
    }
    assert to_jsonable(data) == {
        "a": 1.5,
        "b": 3,
        "c": [1.0, None],
        "d": "inf",
        "e": [1, 2],
        "5": "key",
    }
    assert to_jsonable(-math.inf) == "-inf"


def test_dump_json_is_stable(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    dump_json({"b": 1, "a": [np.float64(0.25)]}, first)
    dump_json({"a": [0.25], "b": 1}, second)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().endswith("\n")
    assert load_json(first) == {"a": [0.25], "b": 1}


def test_file_digest(tmp_path):
    path = tmp_path / "x.txt"
    path.write_bytes(b"abc")
    assert file_digest(path) == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )
