"""Ulp-based comparison of a candidate state against a model (reference) state.

The ulp of a model value ``m`` with ``p`` significand bits is
``2 ** (floor(log2 |m|) - p + 1)``; the error of a candidate ``c`` is
``|m - c| / ulp(m)``.  The normalization comes from the model, so the metric
is not symmetric in its arguments.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .mhd import FIELD_NAMES, FieldState

DOUBLE_PRECISION = 53
DEFAULT_THRESHOLD = 2

def ulp_of(m: float, precision: int = DOUBLE_PRECISION) -> float:
    if math.isnan(m) or math.isinf(m):
        raise ValueError(f"ulp is undefined for {m}")
    if m == 0:
        m = sys.float_info.min
    # frexp gives |m| = f * 2**e with f in [0.5, 1), so floor(log2|m|) = e - 1
    _, e = math.frexp(m)
    return math.ldexp(1.0, e - 1 - precision + 1)


def ulp_error(m: float, c: float, precision: int = DOUBLE_PRECISION) -> float:
    if math.isnan(m) or math.isnan(c):
        raise ValueError("ulp error of NaN")
    return abs(m - c) / ulp_of(m, precision)


def ulp_array(m: np.ndarray, precision: int = DOUBLE_PRECISION) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ValueError("ulp is undefined for non-finite values")
    safe = np.where(m == 0, sys.float_info.min, m)
    _, e = np.frexp(safe)
    return np.ldexp(1.0, e - precision)


def ulp_errors(model: np.ndarray, candidate: np.ndarray, precision: int = DOUBLE_PRECISION) -> np.ndarray:
    model = np.asarray(model, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if np.isnan(candidate).any():
        raise ValueError("candidate contains NaN")
    return np.abs(model - candidate) / ulp_array(model, precision)


@dataclass(frozen=True)
class UlpReport:
    max_ulp: float
    worst_field: str
    worst_index: tuple[int, ...]
    compared_cells: int

    def passed(self, threshold: float = DEFAULT_THRESHOLD) -> bool:
        return self.max_ulp <= threshold

    def format(self, threshold: float = DEFAULT_THRESHOLD) -> str:
        status = "PASS" if self.passed(threshold) else "FAIL"
        return (
            f"status: {status}\n"
            f"max_ulp: {self.max_ulp:g}\n"
            f"threshold: {threshold:g}\n"
            f"worst_field: {self.worst_field}\n"
            f"worst_index: {','.join(map(str, self.worst_index))}\n"
            f"compared_cells: {self.compared_cells}\n"
        )


class ShapeMismatchError(ValueError):
    pass


def compare_arrays(model: np.ndarray, candidate: np.ndarray, names=FIELD_NAMES) -> UlpReport:
    """Compare two ``(fields, x, y, z)`` blocks cell by cell."""
    if model.shape != candidate.shape:
        raise ShapeMismatchError(f"shape mismatch: {model.shape} vs {candidate.shape}")
    err = ulp_errors(model, candidate)
    flat = int(np.argmax(err))
    idx = np.unravel_index(flat, err.shape)
    f = int(idx[0])
    name = names[f] if f < len(names) else str(f)
    return UlpReport(float(err[idx]), name, tuple(int(i) for i in idx[1:]), int(err[0].size))


def compare_states(model: FieldState, candidate: FieldState) -> UlpReport:
    """Max ulp error over the computational region of every field."""
    if model.data.shape != candidate.data.shape or model.radius != candidate.radius:
        raise ShapeMismatchError(
            f"cannot compare grids {model.data.shape} (r={model.radius}) and "
            f"{candidate.data.shape} (r={candidate.radius})"
        )
    return compare_arrays(model.interior, candidate.interior)
