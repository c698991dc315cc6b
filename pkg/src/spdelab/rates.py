"""Log-log regression for empirical convergence orders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import PreconditionError

__all__ = ["RateFit", "fit_rate", "spearman"]


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log(error) = intercept + slope * log(scale)``.

    ``residual`` is the residual sum of squares in log space.
    """

    slope: float
    intercept: float
    residual: float
    kind: str
    points: int

    def predict(self, scale):
        return np.exp(self.intercept) * np.asarray(scale, dtype=float) ** self.slope


def fit_rate(scales, errors, kind="h") -> RateFit:
    """Fit an empirical order from ``(scale, error)`` pairs.

    Raises
    ------
    PreconditionError
        Fewer than three points, or a non-positive scale or error (the message
        names the offending row).
    """
    x = np.asarray(scales, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise PreconditionError("scales and errors must be 1-d arrays of equal length")
    if x.size < 3:
        raise PreconditionError(f"rate fit needs at least 3 points, got {x.size}")
    for i, (s, e) in enumerate(zip(x, y)):
        if not (s > 0 and np.isfinite(s)):
            raise PreconditionError(f"row {i}: scale {s!r} must be positive")
        if not (e > 0 and np.isfinite(e)):
            raise PreconditionError(f"row {i}: error {e!r} must be positive")
    lx, ly = np.log(x), np.log(y)
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    resid = float(res[0]) if res.size else 0.0
    return RateFit(float(coef[0]), float(coef[1]), resid, kind, int(x.size))


def spearman(x, y) -> float:
    """Spearman rank correlation, used to check that a sweep trends.

    ``nan`` when either input is constant (no ranking exists).
    """
    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return float("nan")
    return float(stats.spearmanr(x, y)[0])
