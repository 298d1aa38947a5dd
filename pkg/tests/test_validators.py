import math
from datetime import datetime

import numpy as np
import pytest

from counterlens.utils import (
    decode_meta,
    encode_meta,
    format_distance,
    format_float,
    parse_timestamp,
)
from counterlens.validators import (
    validate_adapter_spec,
    validate_beta,
    validate_counter_factor,
    validate_grid,
    validate_interval_window,
    validate_label,
    validate_sample,
)


def test_clean_sample_has_no_violations(make_sample):
    assert validate_sample(make_sample(), 30) == []


def test_short_sample_reports_row_count(make_sample):
    violations = validate_sample(make_sample(T=28), 30)
    assert violations == ["row count 28 ≠ 30"]


def test_negative_count_is_reported_with_counter_name(make_sample):
    values = np.ones((30, 23))
    values[3, 1] = -2.0
    violations = validate_sample(make_sample(values=values), 30)
    assert len(violations) == 1
    assert violations[0].startswith("row 3, column 1 (Handle Count): negative value")


def test_negative_percentage_is_allowed(make_sample):
    values = np.ones((30, 23))
    values[0, 0] = -1.0
    assert validate_sample(make_sample(values=values), 30) == []


def test_non_finite_cell_is_reported(make_sample):
    values = np.ones((30, 23))
    values[5, 7] = np.nan
    assert validate_sample(make_sample(values=values), 30) == ["row 5, column 7: value is not finite"]


def test_observed_rows_outside_range(make_sample):
    assert "observed_rows 0 < 1" in validate_sample(make_sample(observed_rows=0), 30)
    assert validate_sample(make_sample(observed_rows=31), 30) == ["observed_rows 31 > row count 30"]


@pytest.mark.parametrize("interval,window,ok", [
    (1.0, 30.0, True),
    (0.5, 30.0, True),
    (0.0, 30.0, False),
    (2.0, 1.0, False),
    (1.0, 2.5, False),
    ("x", 30.0, False),
])
def test_validate_interval_window(interval, window, ok):
    assert validate_interval_window(interval, window)[0] is ok


def test_validate_beta():
    assert validate_beta(0.0) == (True, None)
    assert validate_beta(1.5) == (True, None)
    assert validate_beta(-0.1)[0] is False
    assert validate_beta(float("nan"))[0] is False
    assert validate_beta("abc") == (False, "Beta must be a number")


def test_validate_grid():
    assert validate_grid(0.0, 1.0, 0.1) == (True, None)
    assert validate_grid(0.0, 1.0, 0.0)[0] is False
    assert validate_grid(1.0, 0.0, 0.1)[0] is False


def test_validate_label():
    assert validate_label("notepad") == (True, None)
    assert validate_label("") == (False, "Program is required")
    assert validate_label("bad\nname", "Group") == (False, "Group contains control characters")


def test_validate_adapter_spec():
    assert validate_adapter_spec("psutil") == (True, None)
    assert validate_adapter_spec("replay:/tmp/x.csv") == (True, None)
    assert validate_adapter_spec("replay:")[0] is False
    assert validate_adapter_spec("Bad Name")[0] is False


def test_validate_counter_factor():
    assert validate_counter_factor("Handle Count=0.8") == (True, None)
    assert validate_counter_factor("Handle Count")[0] is False
    assert validate_counter_factor("Nope=2")[0] is False
    assert validate_counter_factor("Handle Count=-1")[0] is False


def test_float_formatting():
    assert format_float(0.1) == "0.1"
    assert float(format_float(1 / 3)) == 1 / 3
    assert format_distance(2.0) == "2.000000"
    assert format_distance(math.inf) == "inf"


def test_metadata_encoding_round_trips_structural_characters():
    text = "a,b=c%d\ne\tf"
    encoded = encode_meta(text)
    assert "," not in encoded and "=" not in encoded and "\n" not in encoded and "\t" not in encoded
    assert decode_meta(encoded) == text


def test_parse_timestamp_normalises_to_naive_utc():
    assert parse_timestamp("2024-01-02T03:04:05Z") == datetime(2024, 1, 2, 3, 4, 5)
    assert parse_timestamp("2024-01-02T05:04:05+02:00") == datetime(2024, 1, 2, 3, 4, 5)
    assert parse_timestamp("not a time") is None
    assert parse_timestamp("") is None
