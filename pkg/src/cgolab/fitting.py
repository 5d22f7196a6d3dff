"""Log-log rate fits shared by the convergence studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["RateFit", "fit_rate", "successive_ratios"]


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(y) against log(x) with a 95% interval.

    ``slope`` is d log y / d log x; for a two-point fit the interval is
    degenerate and reported as (slope, slope).
    """

    slope: float
    intercept: float
    ci95: tuple[float, float]
    points: int

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "points": self.points,
        }


def fit_rate(x, y) -> RateFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("rate-fit-underdetermined: need two or more (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate-fit-nonpositive: log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    if x.size == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return RateFit(float(slope), float(ly[0] - slope * lx[0]), (float(slope), float(slope)), 2)
    res = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, x.size - 2) * res.stderr
    return RateFit(
        float(res.slope),
        float(res.intercept),
        (float(res.slope - half), float(res.slope + half)),
        int(x.size),
    )


def successive_ratios(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("rate-fit-underdetermined: need two or more values")
    return y[1:] / y[:-1]
