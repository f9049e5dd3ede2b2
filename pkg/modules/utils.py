# modules/utils.py

import time
from contextlib import contextmanager
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np


# =======================================
# VALIDATION HELPERS
# =======================================

def validate_interval(name: str, low: float, high: float) -> Tuple[bool, str]:
    """
    Validates a closed parameter interval.

    :param name: Parameter name used in the message
    :param low: Lower bound
    :param high: Upper bound
    :return: (True, "") if valid, (False, error_message) otherwise
    """
    if not (np.isfinite(low) and np.isfinite(high)):
        return False, f"{name}: bounds must be finite"
    if low > high:
        return False, f"{name}: lower bound {low} exceeds upper bound {high}"
    return True, ""


def validate_in_box(name: str, value: float, box: Sequence[float], tol: float = 1e-12) -> Tuple[bool, str]:
    """Checks that a scalar parameter lies in its [low, high] box."""
    low, high = box
    if value < low - tol or value > high + tol:
        return False, f"{name}={value} outside [{low}, {high}]"
    return True, ""


def validate_positive(name: str, value: float) -> Tuple[bool, str]:
    if not value > 0:
        return False, f"{name} must be positive (got {value})"
    return True, ""


# =======================================
# RANDOM DRAWS
# =======================================

def make_rng(seed: int) -> np.random.Generator:
    """
    Counter-based generator for parameter draws.

    Philox-4x64 keyed by the seed: the stream is fully determined by
    (key, counter) and documented, so the train/test split is reproducible
    from other languages.
    """
    return np.random.Generator(np.random.Philox(key=int(seed)))


# =======================================
# TIMING
# =======================================

class Stopwatch:
    """Accumulates wall time per named section."""

    def __init__(self):
        self.totals: Dict[str, float] = {}
        self.counts: Dict[str, int] = {}

    @contextmanager
    def section(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.totals[name] = self.totals.get(name, 0.0) + elapsed
            self.counts[name] = self.counts.get(name, 0) + 1

    def as_dict(self) -> Dict[str, float]:
        return dict(self.totals)


# =======================================
# FORMATTING
# =======================================

def fmt_float(value: float) -> str:
    """Formats a float with 17 significant digits."""
    return f"{float(value):.17g}"
