"""Least-squares fits of growth and decay laws."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWindow

MIN_POINTS = 10


class FitMode(str, enum.Enum):
    FREE_EXPONENT = "FreeExponent"
    FIXED_EXPONENT = "FixedExponent"


@dataclass(frozen=True)
class ExponentFit:
    """Result of fitting ``y ~ prefactor * n**exponent``.

    In ``FREE_EXPONENT`` mode the regression is ``log y`` on ``log n`` and
    ``prefactor = exp(intercept)``.  In ``FIXED_EXPONENT`` mode the exponent is
    imposed and the regression is ``y`` on ``n**exponent``, so ``prefactor``
    is the slope.
    """

    exponent: float
    prefactor: float
    intercept: float
    r_squared: float
    window: tuple[int, int]
    mode: FitMode
    points: int


def linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Ordinary least squares ``y = slope * x + intercept``; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < MIN_POINTS:
        raise DegenerateWindow(f"need at least {MIN_POINTS} points, got {len(x)}")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateWindow("regressor is constant over the window")
    slope = float(dx @ dy) / sxx
    intercept = float(ym - slope * xm)
    syy = float(dy @ dy)
    resid = dy - slope * dx
    r2 = 1.0 if syy == 0.0 else max(0.0, 1.0 - float(resid @ resid) / syy)
    return slope, intercept, r2


def window_sites(lo: int, hi: int, points: int | None = None) -> np.ndarray:
    """Integer sites in ``[lo, hi]``: all of them, or ``points`` log-spaced ones."""
    if lo < 1 or hi < lo:
        raise DegenerateWindow(f"bad window [{lo}, {hi}]")
    if points is None or hi - lo + 1 <= points:
        return np.arange(lo, hi + 1)
    return np.unique(np.round(np.geomspace(lo, hi, points)).astype(np.int64))


def fit_power(n: np.ndarray, y: np.ndarray, window: tuple[int, int]) -> ExponentFit:
    """Free-exponent fit of positive ``y`` against ``n``."""
    if np.any(y <= 0):
        raise DegenerateWindow("free-exponent fit needs positive values")
    slope, icpt, r2 = linear_fit(np.log(n), np.log(y))
    return ExponentFit(slope, math.exp(icpt), icpt, r2, window, FitMode.FREE_EXPONENT, len(n))


def fit_fixed(n: np.ndarray, y: np.ndarray, exponent: float, window: tuple[int, int]) -> ExponentFit:
    """Fixed-exponent fit: slope of ``y`` against ``n**exponent``."""
    slope, icpt, r2 = linear_fit(np.asarray(n, dtype=np.float64) ** exponent, y)
    return ExponentFit(exponent, slope, icpt, r2, window, FitMode.FIXED_EXPONENT, len(n))
