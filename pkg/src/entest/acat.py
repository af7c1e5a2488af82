"""Cauchy combination of base-test p-values."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .dist import P_MAX, cauchy_sf
from .errors import DomainError

# 0.5 - p is exact for p >= 0.25 and 1 - p for p >= 0.5, so each branch
# keeps full relative precision on its range.
_LOW, _HIGH = 0.25, 0.75
# Below this the cotangent would overflow once B of them are summed.
_FLOOR = 1e-300


def transform_p(p):
    """Map a p-value to the Cauchy scale, ``tan((0.5 - p) * pi)``.

    Below 1/4 and above 3/4 the cotangent forms ``1/tan(p pi)`` and
    ``-1/tan((1 - p) pi)`` are used so p-values near 0 and 1 keep full
    relative precision.
    P-values below 1e-300 saturate at the value for 1e-300 and a p-value of
    exactly 1 is read as the largest double below 1.  Accepts scalars or
    arrays.
    """
    scalar = np.ndim(p) == 0
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p <= 1)):
        raise DomainError("p-values must lie in (0, 1]")
    p = np.minimum(p, P_MAX)
    with np.errstate(over="ignore", divide="ignore"):
        mid = np.tan((0.5 - p) * np.pi)
        low = 1.0 / np.tan(np.maximum(p, _FLOOR) * np.pi)
        high = -1.0 / np.tan((1.0 - p) * np.pi)
    out = np.where(p < _LOW, low, np.where(p > _HIGH, high, mid))
    return float(out) if scalar else out


class Combined(NamedTuple):
    statistic: float
    p_en: float


def combine(p_values: Sequence[float]) -> Combined:
    """Average the transformed p-values and return the Cauchy tail of the mean.

    The sum is exactly rounded (``math.fsum``), so the result does not depend
    on the order of the inputs.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size == 0:
        raise DomainError("combine needs at least one p-value")
    t = math.fsum(np.atleast_1d(transform_p(p)).tolist()) / p.size
    return Combined(t, cauchy_sf(t))


def combine_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise ensemble p-values for a ``(reps, B)`` array (batch simulations).

    Plain floating-point summation; intended for Monte Carlo where
    order-independence to the last bit is not needed.
    """
    t = np.asarray(transform_p(p)).mean(axis=-1)
    return np.asarray(cauchy_sf(t))
