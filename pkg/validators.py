#!/usr/bin/env python3

# validators.py
from typing import Any, Callable, Dict, List

from fem import SOLVERS
from suggestors import list_presets

SOLVER_NAMES = list(SOLVERS)
RUN_MODES = ["reference", "selfsupporting", "both"]


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError("booleans are not numbers")
    return float(value)


def _as_int(value: Any) -> int:
    number = _as_float(value)
    if int(number) != number:
        raise ValueError(f"{value} is not an integer")
    return int(number)


def is_volume_fraction(value: Any) -> bool:
    """Validate a target volume fraction in the open interval (0, 1)."""
    try:
        return 0 < _as_float(value) < 1
    except (TypeError, ValueError):
        return False


def is_filter_radius(value: Any) -> bool:
    """Validate a filter radius (minimum thickness) of at least one element."""
    try:
        return _as_float(value) >= 1
    except (TypeError, ValueError):
        return False


def is_overhang_angle(value: Any) -> bool:
    """Validate an overhang angle in degrees, strictly between 0 and 90."""
    try:
        return 0 < _as_float(value) < 90
    except (TypeError, ValueError):
        return False


def is_penalization(value: Any) -> bool:
    try:
        return _as_float(value) >= 1
    except (TypeError, ValueError):
        return False


def is_threshold(value: Any) -> bool:
    try:
        return 0 < _as_float(value) < 1
    except (TypeError, ValueError):
        return False


def is_positive_int(value: Any) -> bool:
    try:
        return _as_int(value) >= 1
    except (TypeError, ValueError):
        return False


def is_non_negative_int(value: Any) -> bool:
    try:
        return _as_int(value) >= 0
    except (TypeError, ValueError):
        return False


def is_dims(value: Any) -> bool:
    """Validate grid dimensions given as 'NXxNY[xNZ]' or a list of 2 or 3 positive integers."""
    if isinstance(value, str):
        value = value.lower().split("x")
    if not isinstance(value, (list, tuple)) or len(value) not in (2, 3):
        return False
    return all(is_positive_int(v) for v in value)


def is_direction(value: Any) -> bool:
    """Validate a build direction such as +y or -x."""
    return isinstance(value, str) and len(value) == 2 and value[0] in "+-" and value[1] in "xyz"


def is_preset_name(value: Any) -> bool:
    return value in list_presets()


def is_valid_enum(value: Any, allowed: List[str]) -> bool:
    """Validate if a value is in a list of allowed values."""
    return value in allowed


def make_enum_validator(allowed_values: List[str]) -> Callable[[Any], bool]:
    """Create a validator function for enum values."""
    return lambda value: is_valid_enum(value, allowed_values)


# Dictionary mapping validator names to their functions
validators: Dict[str, Callable[[Any], bool]] = {
    "volume-fraction": is_volume_fraction,
    "filter-radius": is_filter_radius,
    "overhang-angle": is_overhang_angle,
    "penalization": is_penalization,
    "threshold": is_threshold,
    "positive-int": is_positive_int,
    "non-negative-int": is_non_negative_int,
    "dims": is_dims,
    "direction": is_direction,
    "preset-name": is_preset_name,
    "solver": make_enum_validator(SOLVER_NAMES),
    "mode": make_enum_validator(RUN_MODES),
    "enum": None  # This is handled specially in the command validator
}
