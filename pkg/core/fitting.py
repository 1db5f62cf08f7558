"""Error-weighted straight-line fits used by the decay and Peierls analyses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from scipy import optimize, stats

from core.errors import InsufficientDataError


@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    n: int
    chi2: float

    @property
    def slope_negative_95(self) -> bool:
        """One-sided 95% confidence that the slope is negative."""
        return bool(self.slope + stats.norm.ppf(0.95) * self.slope_err < 0)

    @property
    def slope_positive_95(self) -> bool:
        return bool(self.slope - stats.norm.ppf(0.95) * self.slope_err > 0)

    def predict(self, x: float) -> float:
        return self.intercept + self.slope * x

    def to_dict(self) -> Dict[str, float]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_err": self.slope_err,
            "intercept_err": self.intercept_err,
            "n": self.n,
            "chi2": self.chi2,
        }


def _line(x, intercept, slope):
    return intercept + slope * x


def weighted_linear_fit(
    x: Sequence[float],
    y: Sequence[float],
    sigma: Sequence[float],
) -> LinearFit:
    """Least squares y = intercept + slope * x with absolute errors `sigma`.

    Parameter errors are the square roots of the covariance diagonal, taken
    as absolute (not rescaled by the reduced chi^2).
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    sa = np.asarray(sigma, dtype=float)
    if len(xa) < 2:
        raise InsufficientDataError(f"a line needs >= 2 points, got {len(xa)}")
    if len(ya) != len(xa) or len(sa) != len(xa):
        raise ValueError("x, y and sigma must have equal length")
    if np.any(sa <= 0):
        raise ValueError("sigma must be positive")
    if np.ptp(xa) == 0:
        raise InsufficientDataError("fit points have no spread in x")

    p0 = np.polyfit(xa, ya, 1, w=1.0 / sa)[::-1]
    popt, pcov = optimize.curve_fit(_line, xa, ya, p0=p0, sigma=sa, absolute_sigma=True)
    intercept, slope = (float(p) for p in popt)
    perr = np.sqrt(np.diag(pcov))
    chi2 = float((((ya - _line(xa, intercept, slope)) / sa) ** 2).sum())
    return LinearFit(
        slope=slope,
        intercept=intercept,
        slope_err=float(perr[1]),
        intercept_err=float(perr[0]),
        n=len(xa),
        chi2=chi2,
    )


__all__ = ["LinearFit", "weighted_linear_fit"]
