"""Fixed numeric formatting for files and terminal output."""

import math

SIG_DIGITS = 12


def fmt(x) -> str:
    """12 significant digits, platform independent (``repr``-free)."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    out = format(x, f".{SIG_DIGITS}g")
    return "0" if out == "-0" else out
