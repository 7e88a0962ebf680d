"""Small numeric helpers."""

import numpy as np


def kahan_sum(values) -> float:
    """Compensated summation, largest magnitudes first."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(-np.abs(values), kind="stable")
    total = 0.0
    carry = 0.0
    for v in values[order]:
        y = v - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total
