"""Shared CSV formatting."""

import math

FLOAT_FORMAT = "%.12g"


def fmt(value) -> str:
    """Float with 12 significant digits; empty string for NaN."""
    value = float(value)
    if math.isnan(value):
        return ""
    return FLOAT_FORMAT % value
