"""
Validation helpers for samples and user-supplied configuration values
"""
import math
import re

import numpy as np

from .models import CATALOG_NAMES, COUNTER_CATALOG, COUNTER_COUNT, ProgramSample


def validate_sample(sample: ProgramSample, expected_T: int) -> list[str]:
    """
    Check a sample against the ProgramSample invariants

    Args:
        sample: Sample to check
        expected_T: Number of rows the sample must have

    Returns:
        list of violation messages, empty when the sample is clean
    """
    violations = []
    rows, columns = sample.values.shape

    if rows != expected_T:
        violations.append(f"row count {rows} ≠ {expected_T}")
    if columns != COUNTER_COUNT:
        violations.append(f"column count {columns} ≠ {COUNTER_COUNT}")
    if sample.observed_rows < 1:
        violations.append(f"observed_rows {sample.observed_rows} < 1")
    elif sample.observed_rows > rows:
        violations.append(f"observed_rows {sample.observed_rows} > row count {rows}")
    if not sample.interval > 0:
        violations.append(f"interval {sample.interval} is not positive")
    for index in sample.missing_counters:
        if not 0 <= index < COUNTER_COUNT:
            violations.append(f"missing counter index {index} is outside the catalog")

    finite = np.isfinite(sample.values)
    for row, column in zip(*np.nonzero(~finite)):
        violations.append(f"row {row}, column {column}: value is not finite")

    for spec in COUNTER_CATALOG[:columns]:
        if not spec.kind.non_negative:
            continue
        column_values = sample.values[:, spec.index]
        for row in np.nonzero(finite[:, spec.index] & (column_values < 0))[0]:
            violations.append(
                f"row {row}, column {spec.index} ({spec.name}): "
                f"negative value {column_values[row]!r} for a {spec.kind.value} counter"
            )
    return violations


def validate_interval_window(interval, window):
    """
    Validate a collection interval and window

    Returns:
        tuple: (is_valid, error_message)
    """
    try:
        interval = float(interval)
        window = float(window)
    except (TypeError, ValueError):
        return False, "Interval and window must be numbers"

    if not interval > 0:
        return False, "Interval must be positive"

    if window < interval:
        return False, "Window must be at least one interval"

    ratio = window / interval
    if abs(ratio - round(ratio)) > 1e-9:
        return False, "Window must be a whole number of intervals"

    return True, None


def validate_beta(beta):
    """
    Validate the detection threshold

    Returns:
        tuple: (is_valid, error_message)
    """
    try:
        beta = float(beta)
    except (TypeError, ValueError):
        return False, "Beta must be a number"

    if math.isnan(beta) or beta < 0:
        return False, "Beta must be a non-negative number"

    return True, None


def validate_grid(range_lo, range_hi, step):
    """
    Validate a beta grid definition

    Returns:
        tuple: (is_valid, error_message)
    """
    if not step > 0:
        return False, "Grid step must be positive"

    if range_hi < range_lo:
        return False, "Grid upper bound must not be below the lower bound"

    if range_lo < 0:
        return False, "Grid lower bound must be non-negative"

    return True, None


def validate_label(label, field_name="Program"):
    """
    Validate a program or group label used in sample metadata

    Returns:
        tuple: (is_valid, error_message)
    """
    if not label:
        return False, f"{field_name} is required"

    if len(label) > 200:
        return False, f"{field_name} must be less than 200 characters"

    # Control characters would corrupt the line-oriented file formats
    if re.search(r"[\x00-\x1f\x7f]", label):
        return False, f"{field_name} contains control characters"

    return True, None


def validate_adapter_spec(spec):
    """
    Validate an adapter selector such as ``psutil`` or ``replay:<path>``

    Returns:
        tuple: (is_valid, error_message)
    """
    if not spec:
        return False, "Adapter is required"

    if spec.startswith("replay:"):
        if not spec[len("replay:"):].strip():
            return False, "Replay adapter needs a file path"
        return True, None

    if not re.match(r"^[a-z][a-z0-9_-]*$", spec):
        return False, f"Adapter name {spec!r} is not valid"

    return True, None


def validate_counter_factor(text):
    """
    Validate a ``<counter name>=<positive factor>`` pair

    Returns:
        tuple: (is_valid, error_message)
    """
    name, sep, raw_factor = (text or "").rpartition("=")
    if not sep:
        return False, "Factor must look like '<counter name>=<factor>'"

    if name.strip() not in CATALOG_NAMES:
        return False, f"Unknown counter {name.strip()!r}"

    try:
        factor = float(raw_factor)
    except ValueError:
        return False, f"Factor {raw_factor!r} is not a number"

    if not factor > 0 or math.isinf(factor):
        return False, "Factor must be a positive finite number"

    return True, None
